//! Scoring oracle and generators.

use deskmate::actions::{Action, ActionKind, ActionRecord, ExecOutcome, StopOutcome};
use deskmate::agents::{AblationFlags, StrategyKind, Verdict};
use deskmate::dataset::{AdmissibleSet, Interaction, Level};
use deskmate::eval::{EpisodeScore, ReportConfig};
use proptest::prelude::*;

pub const PEOPLE: [(&str, &str); 4] = [("Mao", "h-mao"), ("Wu", "h-wu"), ("Sun", "h-sun"), ("Lee", "h-lee")];
pub const KINDS: [ActionKind; 6] = [
    ActionKind::Inform,
    ActionKind::Inquire,
    ActionKind::Forward,
    ActionKind::SendQRCode,
    ActionKind::Move,
    ActionKind::WaitInPlace,
];

pub fn id_of(name: &str) -> &'static str {
    PEOPLE.iter().find(|(n, _)| *n == name).map(|(_, id)| *id).unwrap()
}

// Written against the tiny name table above rather than the scenario.
pub fn oracle_compat(a: &Action, i: &Interaction) -> bool {
    let (kind, target, source, text) = match a {
        Action::Inform { contact, content } => (ActionKind::Inform, contact, None, content.as_str()),
        Action::Inquire { contact, question } => (ActionKind::Inquire, contact, None, question.as_str()),
        Action::Forward { source, target } => (ActionKind::Forward, target, Some(source), ""),
        Action::SendQRCode { contact } => (ActionKind::SendQRCode, contact, None, ""),
        Action::Move { target_name } => (ActionKind::Move, target_name, None, ""),
        Action::WaitInPlace { user } => (ActionKind::WaitInPlace, user, None, ""),
        _ => return false,
    };
    kind == i.kind
        && id_of(target) == i.target
        && i.source.as_ref().is_none_or(|s| source.map(|x| id_of(x)) == Some(s.as_str()))
        && i.contains.iter().all(|c| text.to_lowercase().contains(&c.to_lowercase()))
}

/// Tries every assignment of interactions to distinct actions.
pub fn oracle_matches(actions: &[&Action], set: &AdmissibleSet) -> usize {
    fn go(k: usize, actions: &[&Action], set: &AdmissibleSet, pos: &mut Vec<Option<usize>>) -> usize {
        if k == set.interactions.len() {
            let assigned: Vec<(u32, usize)> = pos
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.map(|p| (set.interactions[i].order_group, p)))
                .collect();
            let ordered = assigned
                .iter()
                .all(|&(g1, p1)| assigned.iter().all(|&(g2, p2)| g1 >= g2 || p1 < p2));
            return if ordered { assigned.len() } else { 0 };
        }
        pos.push(None);
        let mut best = go(k + 1, actions, set, pos);
        pos.pop();
        for a in 0..actions.len() {
            if pos.contains(&Some(a)) || !oracle_compat(actions[a], &set.interactions[k]) {
                continue;
            }
            pos.push(Some(a));
            best = best.max(go(k + 1, actions, set, pos));
            pos.pop();
        }
        best
    }
    go(0, actions, set, &mut Vec::new())
}

pub fn oracle_score(sets: &[AdmissibleSet], records: &[ActionRecord], malformed: u32, verdict: Verdict) -> EpisodeScore {
    let executed: Vec<&Action> = records
        .iter()
        .filter(|r| r.exec_outcome != ExecOutcome::Rejected)
        .filter(|r| !matches!(r.action, Action::Stop { .. } | Action::Wait { .. }))
        .map(|r| &r.action)
        .collect();
    let mut best: Option<(bool, usize, usize)> = None;
    for s in sets {
        let m = oracle_matches(&executed, s);
        let n = s.interactions.len();
        let better = match best {
            None => true,
            Some((full, bm, bn)) => {
                (m == n && !full) || (m == n) == full && (m > bm || (m == bm && n < bn))
            }
        };
        if better {
            best = Some((m == n, m, n));
        }
    }
    let (full, m, n) = best.unwrap();
    let (mut cc, mut ct, mut rc, mut rt) = (0, malformed, 0, 0);
    for r in records {
        let real = match r.action {
            Action::Move { .. } | Action::WaitInPlace { .. } => true,
            Action::Stop { .. } | Action::Wait { .. } => continue,
            _ => false,
        };
        let ok = r.exec_outcome != ExecOutcome::Rejected
            && sets.iter().any(|s| s.interactions.iter().any(|i| oracle_compat(&r.action, i)));
        if real {
            rt += 1;
            rc += ok as u32;
        } else {
            ct += 1;
            cc += ok as u32;
        }
    }
    EpisodeScore {
        entry_id: "x".into(),
        level: Level::L2,
        achievable: true,
        success: full && verdict == Verdict::Achieved,
        completed_necessary: m as u32,
        total_required: n as u32,
        redundant: (executed.len() - m) as u32,
        cyber_correct: cc,
        cyber_total: ct,
        real_correct: rc,
        real_total: rt,
        incomplete: false,
    }
}

pub fn person() -> impl Strategy<Value = &'static str> {
    prop::sample::select(PEOPLE.iter().map(|(n, _)| *n).collect::<Vec<_>>())
}

pub fn interaction() -> impl Strategy<Value = Interaction> {
    (
        prop::sample::select(KINDS.to_vec()),
        person(),
        person(),
        any::<bool>(),
        0u32..3,
    )
        .prop_map(|(kind, target, source, needs_pen, order_group)| Interaction {
            kind,
            target: id_of(target).to_string(),
            source: (kind == ActionKind::Forward).then(|| id_of(source).into()),
            contains: if needs_pen && matches!(kind, ActionKind::Inform | ActionKind::Inquire) {
                vec!["pen".into()]
            } else {
                Vec::new()
            },
            order_group,
            outcome: None,
        })
}

pub fn record() -> impl Strategy<Value = ActionRecord> {
    (0usize..8, person(), person(), any::<bool>(), 0u8..10).prop_map(|(k, a, b, pen, roll)| {
        let text = if pen { "a pen please" } else { "hello" }.to_string();
        let action = match k {
            0 => Action::Inform { contact: a.into(), content: text },
            1 => Action::Inquire { contact: a.into(), question: text },
            2 => Action::Forward { source: b.into(), target: a.into() },
            3 => Action::SendQRCode { contact: a.into() },
            4 => Action::Move { target_name: a.into() },
            5 => Action::WaitInPlace { user: a.into() },
            6 => Action::Wait { content: "waiting".into() },
            _ => Action::Stop { outcome: StopOutcome::Achieved },
        };
        ActionRecord {
            step: 0,
            action,
            exec_outcome: if roll == 0 { ExecOutcome::Rejected } else { ExecOutcome::Done },
            emitted_events: 0,
            error: None,
        }
    })
}

pub fn sets() -> impl Strategy<Value = Vec<AdmissibleSet>> {
    prop::collection::vec(
        prop::collection::vec(interaction(), 1..=4).prop_map(|mut interactions| {
            interactions.sort_by_key(|i| i.order_group);
            AdmissibleSet { helper: None, interactions }
        }),
        1..=3,
    )
}

pub fn verdict() -> impl Strategy<Value = Verdict> {
    prop::sample::select(vec![Verdict::Achieved, Verdict::Unachievable, Verdict::Exhausted])
}

pub fn config() -> ReportConfig {
    ReportConfig {
        strategy: StrategyKind::Ppdr,
        flags: AblationFlags::FULL,
        backend: "test".into(),
        seeds: vec![0],
        max_steps: 30,
        achievable_only: false,
    }
}

pub fn random_score() -> impl Strategy<Value = EpisodeScore> {
    (
        prop::sample::select(Level::ALL.to_vec()),
        any::<bool>(),
        any::<bool>(),
        1u32..12,
        0u32..12,
        0u32..20,
        0u32..10,
        0u32..10,
        0u32..10,
        0u32..10,
    )
        .prop_map(|(level, achievable, success, total, done, redundant, cc, ct, rc, rt)| EpisodeScore {
            entry_id: String::new(),
            level,
            achievable,
            success,
            completed_necessary: done.min(total),
            total_required: total,
            redundant,
            cyber_correct: cc.min(ct),
            cyber_total: ct,
            real_correct: rc.min(rt),
            real_total: rt,
            incomplete: false,
        })
}

pub fn numbered(mut scores: Vec<EpisodeScore>) -> Vec<EpisodeScore> {
    for (i, s) in scores.iter_mut().enumerate() {
        s.entry_id = format!("e{i}");
    }
    scores
}
