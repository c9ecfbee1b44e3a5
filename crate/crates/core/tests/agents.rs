use std::sync::Arc;

use deskmate::actions::{Action, StopOutcome};
use deskmate::agents::{
    run_episode, AblationFlags, EpisodeConfig, EpisodeInput, Judgment, NoHooks, StrategyKind, Verdict,
};
use deskmate::dataset::{self, TaskEntry};
use deskmate::eval::{run_entry, score_episode};
use deskmate::llm::{PersonaMode, PolicyBackend};
use deskmate::memory::EntityId;
use deskmate::scenario::Scenario;
use deskmate::sim::World;
use deskmate::trace::EpisodeTrace;

fn entry(id: &str) -> TaskEntry {
    dataset::bundled().into_iter().find(|e| e.id == id).unwrap()
}

fn run(id: &str, cfg: EpisodeConfig) -> EpisodeTrace {
    let sc = Arc::new(Scenario::bundled());
    run_entry(&entry(id), &sc, cfg, PersonaMode::Scripted, &PolicyBackend::new()).unwrap()
}

fn flags(perception: bool, planning: bool, reflection: bool) -> AblationFlags {
    AblationFlags {
        perception,
        planning,
        reflection,
    }
}

fn contacts(a: &Action) -> Option<&str> {
    match a {
        Action::Inquire { contact, .. } | Action::Inform { contact, .. } | Action::SendQRCode { contact } => {
            Some(contact)
        }
        Action::Move { target_name } => Some(target_name),
        Action::WaitInPlace { user } => Some(user),
        _ => None,
    }
}

#[test]
fn decline_marks_owner_unavailable_and_moves_on() {
    let e = entry("b01-v1");
    let sc = Arc::new(Scenario::bundled());
    let mut world = World::new(sc.clone(), &e.availability, PersonaMode::Scripted, 0).unwrap();
    let mut memory = sc.fresh_memory();
    let mao = EntityId::new("h-mao");
    assert_eq!(memory.graph().availability(&mao), Some(true));
    let input = EpisodeInput {
        entry_id: e.id.clone(),
        requester: e.requester.clone(),
        instruction: e.instruction.clone(),
    };
    let trace = run_episode(&input, EpisodeConfig::default(), &mut world, &mut memory, &PolicyBackend::new(), &mut NoHooks);

    let first = &trace.steps[0];
    assert!(matches!(&first.actions[0].action, Action::Inquire { contact, .. } if contact == "Mao"));
    let r = first.reflection.as_ref().unwrap();
    assert_eq!(r.judgment, Judgment::N);
    assert_eq!(r.unavailable, vec!["Mao".to_string()]);
    assert_eq!(memory.graph().availability(&mao), Some(false));

    let later: Vec<&str> = trace.steps[1..]
        .iter()
        .flat_map(|s| &s.actions)
        .filter_map(|a| contacts(&a.action))
        .collect();
    assert!(later.iter().any(|c| ["Sun", "Wu"].contains(c)), "{later:?}");
    assert_eq!(trace.footer.verdict, Verdict::Achieved);
}

#[test]
fn all_owners_away_ends_unachievable() {
    let e = entry("b15-v6");
    assert!(!e.achievable);
    let trace = run("b15-v6", EpisodeConfig::default());
    let last = trace.steps.last().unwrap().actions.last().unwrap();
    assert_eq!(last.action, Action::Stop { outcome: StopOutcome::Unachievable });
    assert_eq!(trace.footer.verdict, Verdict::Unachievable);
    let group_asked = trace
        .steps
        .iter()
        .flat_map(|s| &s.actions)
        .any(|a| matches!(&a.action, Action::Inquire { contact, .. } if contact == "Office Group"));
    assert!(group_asked);
    let score = score_episode(&trace, &e, &Scenario::bundled()).unwrap();
    assert!(score.success);
}

#[test]
fn ablations_emit_only_enabled_stages() {
    for p in [false, true] {
        for pl in [false, true] {
            for r in [false, true] {
                let cfg = EpisodeConfig {
                    flags: flags(p, pl, r),
                    ..EpisodeConfig::default()
                };
                let t = run("b01", cfg);
                assert_eq!(t.header.flags, flags(p, pl, r));
                for s in &t.steps {
                    assert_eq!(s.perception.is_some(), p, "perception {p} {pl} {r}");
                    assert_eq!(s.plan.is_some(), pl, "planning {p} {pl} {r}");
                    // the terminating step never reflects
                    if !s.actions.iter().any(|a| matches!(a.action, Action::Stop { .. })) {
                        assert_eq!(s.reflection.is_some(), r, "reflection {p} {pl} {r}");
                    }
                    assert!(s.thought.is_none());
                }
            }
        }
    }
}

#[test]
fn baselines_have_no_ppdr_stages() {
    for kind in [StrategyKind::Direct, StrategyKind::Cot, StrategyKind::React, StrategyKind::Reflexion] {
        let t = run("b19", EpisodeConfig { strategy: kind, ..EpisodeConfig::default() });
        for s in &t.steps {
            assert!(s.perception.is_none() && s.plan.is_none() && s.reflection.is_none(), "{kind:?}");
        }
        assert_eq!(t.header.strategy, kind);
    }
}

#[test]
fn same_seed_same_trace() {
    for id in ["b01-v1", "b13-v6", "b27"] {
        let a = run(id, EpisodeConfig::default()).to_jsonl();
        let b = run(id, EpisodeConfig::default()).to_jsonl();
        assert_eq!(a, b, "{id}");
    }
}

#[test]
fn step_budget_stops_the_episode() {
    let t = run("b13-v6", EpisodeConfig { max_steps: 2, ..EpisodeConfig::default() });
    assert_eq!(t.footer.steps, 2);
    assert_eq!(t.footer.verdict, Verdict::Exhausted);
}
