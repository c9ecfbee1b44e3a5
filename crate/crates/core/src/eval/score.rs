//! Scoring one episode against the admissible interaction sets of its entry.
//!
//! An action counts toward a set when it matches one of the set's
//! interactions by kind, target, source and required substrings. Matching is
//! one-to-one, and interactions of a lower order group must be matched by
//! earlier actions than those of a higher group. Within a group order is
//! free.

use serde::{Deserialize, Serialize};

use crate::actions::{Action, ActionClass, ActionKind, ActionRecord, ExecOutcome};
use crate::agents::Verdict;
use crate::dataset::{resolve_gold, AdmissibleSet, Interaction, Level, TaskEntry};
use crate::scenario::Scenario;
use crate::trace::EpisodeTrace;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub entry_id: String,
    pub level: Level,
    pub achievable: bool,
    pub success: bool,
    pub completed_necessary: u32,
    pub total_required: u32,
    pub redundant: u32,
    pub cyber_correct: u32,
    pub cyber_total: u32,
    pub real_correct: u32,
    pub real_total: u32,
    /// The episode was cut short by a backend failure.
    #[serde(default)]
    pub incomplete: bool,
}

/// Maps names used in actions to scenario ids.
pub struct Resolver<'a> {
    scenario: &'a Scenario,
}

impl<'a> Resolver<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self { scenario }
    }

    /// A person or chat group, by id or display name.
    pub fn party(&self, name: &str) -> Option<String> {
        if let Some(p) = self.scenario.person(name) {
            return Some(p.id.to_string());
        }
        let key = name.trim();
        self.scenario
            .groups
            .iter()
            .find(|g| g.id.eq_ignore_ascii_case(key) || g.name.eq_ignore_ascii_case(key))
            .map(|g| g.id.clone())
    }

    /// The person a move is heading for: a person directly, or whoever sits
    /// at the named location.
    pub fn place_person(&self, name: &str) -> Option<String> {
        if let Some(p) = self.scenario.person(name) {
            return Some(p.id.to_string());
        }
        let key = name.trim();
        let loc = self
            .scenario
            .locations
            .iter()
            .find(|l| l.id.as_str() == key || l.name.eq_ignore_ascii_case(key))?;
        self.scenario
            .people
            .iter()
            .find(|p| p.location.as_ref() == Some(&loc.id))
            .map(|p| p.id.to_string())
    }
}

/// Whether `action` does what `interaction` asks for.
pub fn compatible(action: &Action, interaction: &Interaction, r: &Resolver) -> bool {
    if action.kind() != interaction.kind {
        return false;
    }
    if let Action::Stop { outcome } = action {
        return interaction.outcome.is_none_or(|o| o == *outcome);
    }
    let target = match action {
        Action::Move { target_name } => r.place_person(target_name),
        _ => action.target().and_then(|t| r.party(t)),
    };
    if target.as_deref() != Some(interaction.target.as_str()) {
        return false;
    }
    if let Some(want) = &interaction.source {
        if action.source().and_then(|s| r.party(s)).as_deref() != Some(want.as_str()) {
            return false;
        }
    }
    if !interaction.contains.is_empty() {
        let text = action.text().unwrap_or("").to_lowercase();
        if !interaction
            .contains
            .iter()
            .all(|c| text.contains(&c.to_lowercase()))
        {
            return false;
        }
    }
    true
}

/// Actions that count as interactions: executed, and neither `Stop` nor
/// `Wait`.
pub fn is_interaction(record: &ActionRecord) -> bool {
    record.exec_outcome != ExecOutcome::Rejected
        && !matches!(record.action.kind(), ActionKind::Stop | ActionKind::Wait)
}

fn bipartite(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut size = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if augment(u, adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Largest order-respecting matching between `actions` and the set.
pub fn match_count(actions: &[&Action], set: &AdmissibleSet, r: &Resolver) -> usize {
    let mut groups: Vec<u32> = set.interactions.iter().map(|i| i.order_group).collect();
    groups.sort_unstable();
    groups.dedup();
    let compat: Vec<Vec<bool>> = set
        .interactions
        .iter()
        .map(|i| actions.iter().map(|a| compatible(a, i, r)).collect())
        .collect();
    let n = actions.len();
    // best[p]: most matches for the groups so far using actions[..p]
    let mut best = vec![0usize; n + 1];
    for g in groups {
        let members: Vec<usize> = (0..set.interactions.len())
            .filter(|&i| set.interactions[i].order_group == g)
            .collect();
        let mut next = vec![0usize; n + 1];
        for (p, slot) in next.iter_mut().enumerate() {
            let mut top = 0;
            for (q, &done) in best.iter().enumerate().take(p + 1) {
                let adj: Vec<Vec<usize>> = members
                    .iter()
                    .map(|&i| (q..p).filter(|&a| compat[i][a]).map(|a| a - q).collect())
                    .collect();
                top = top.max(done + bipartite(&adj, p - q));
            }
            *slot = top;
        }
        best = next;
    }
    best[n]
}

/// Index of the set the episode is scored against, and its match count:
/// a fully matched set first, then the most matches, then the fewest
/// requirements, then the earliest.
pub fn best_set(actions: &[&Action], sets: &[AdmissibleSet], r: &Resolver) -> Option<(usize, usize)> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| (i, match_count(actions, s, r), s.interactions.len()))
        .min_by_key(|&(i, m, total)| (m < total, std::cmp::Reverse(m), total, i))
        .map(|(i, m, _)| (i, m))
}

/// Scores action records against pre-resolved sets.
#[allow(clippy::too_many_arguments)]
pub fn score_records(
    entry_id: &str,
    level: Level,
    achievable: bool,
    sets: &[AdmissibleSet],
    records: &[ActionRecord],
    malformed_steps: u32,
    verdict: Verdict,
    r: &Resolver,
) -> EpisodeScore {
    let executed: Vec<&Action> = records
        .iter()
        .filter(|rec| is_interaction(rec))
        .map(|rec| &rec.action)
        .collect();
    // Stop is never among `executed`, so only achievable entries have
    // matched interactions to subtract.
    let (success, completed, total) = if achievable {
        match best_set(&executed, sets, r) {
            Some((i, m)) => {
                let total = sets[i].interactions.len();
                (m == total && verdict == Verdict::Achieved, m, total)
            }
            None => (false, 0, 1),
        }
    } else {
        let declared = verdict == Verdict::Unachievable;
        (declared, usize::from(declared), 1)
    };
    let mut score = EpisodeScore {
        entry_id: entry_id.to_string(),
        level,
        achievable,
        success,
        completed_necessary: completed as u32,
        total_required: total as u32,
        redundant: (executed.len() - if achievable { completed } else { 0 }) as u32,
        cyber_correct: 0,
        cyber_total: malformed_steps,
        real_correct: 0,
        real_total: 0,
        incomplete: false,
    };
    for rec in records {
        if matches!(rec.action.kind(), ActionKind::Stop | ActionKind::Wait) {
            continue;
        }
        let correct = rec.exec_outcome != ExecOutcome::Rejected
            && achievable
            && sets
                .iter()
                .flat_map(|s| s.interactions.iter())
                .any(|i| compatible(&rec.action, i, r));
        let (ok, all) = match rec.action.class() {
            ActionClass::Cyber => (&mut score.cyber_correct, &mut score.cyber_total),
            ActionClass::Real => (&mut score.real_correct, &mut score.real_total),
            ActionClass::Generic => continue,
        };
        *all += 1;
        *ok += u32::from(correct);
    }
    score
}

pub fn score_episode(trace: &EpisodeTrace, entry: &TaskEntry, scenario: &Scenario) -> Result<EpisodeScore, EvalError> {
    if trace.header.entry != entry.id {
        return Err(EvalError::Mismatch {
            trace: trace.header.entry.clone(),
            entry: entry.id.clone(),
        });
    }
    let sets = resolve_gold(&entry.gold, &entry.availability, scenario).map_err(|source| {
        EvalError::Gold {
            entry: entry.id.clone(),
            source,
        }
    })?;
    let records: Vec<ActionRecord> = trace.records().cloned().collect();
    let mut score = score_records(
        &entry.id,
        entry.level,
        entry.achievable,
        &sets,
        &records,
        trace.footer.malformed_steps,
        trace.footer.verdict,
        &Resolver::new(scenario),
    );
    score.incomplete = trace.footer.incomplete;
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{parse_action, StopOutcome};

    fn rec(line: &str) -> ActionRecord {
        ActionRecord {
            step: 0,
            action: parse_action(line).unwrap(),
            exec_outcome: ExecOutcome::Done,
            emitted_events: 0,
            error: None,
        }
    }

    fn inter(kind: ActionKind, target: &str, group: u32) -> Interaction {
        Interaction {
            kind,
            target: target.into(),
            source: None,
            contains: Vec::new(),
            order_group: group,
            outcome: None,
        }
    }

    fn set(items: Vec<Interaction>) -> AdmissibleSet {
        AdmissibleSet {
            helper: None,
            interactions: items,
        }
    }

    #[test]
    fn move_to_a_desk_counts_as_moving_to_its_owner() {
        let sc = Scenario::bundled();
        let r = Resolver::new(&sc);
        assert_eq!(r.place_person("loc-ws02").as_deref(), Some("h-mao"));
        assert_eq!(r.place_person("Mao").as_deref(), Some("h-mao"));
        assert_eq!(r.place_person("loc-pantry"), None);
        assert_eq!(r.party("office group").as_deref(), Some("office-group"));
    }

    #[test]
    fn order_between_groups_is_enforced() {
        let sc = Scenario::bundled();
        let r = Resolver::new(&sc);
        let s = set(vec![
            inter(ActionKind::Inquire, "h-mao", 0),
            inter(ActionKind::Move, "h-mao", 1),
        ]);
        let a = parse_action("ACTION Move | target_name=Mao").unwrap();
        let b = parse_action("ACTION Inquire | contact=Mao | question=pen?").unwrap();
        assert_eq!(match_count(&[&b, &a], &s, &r), 2);
        assert_eq!(match_count(&[&a, &b], &s, &r), 1);
        assert_eq!(match_count(&[&a, &b, &a], &s, &r), 2);
    }

    #[test]
    fn unachievable_entry_scores_the_declaration() {
        let sc = Scenario::bundled();
        let r = Resolver::new(&sc);
        let sets = vec![set(vec![Interaction::stop_unachievable()])];
        let recs = vec![
            rec("ACTION Inquire | contact=Mao | question=pen?"),
            ActionRecord {
                action: Action::Stop {
                    outcome: StopOutcome::Unachievable,
                },
                ..rec("ACTION Stop | outcome=unachievable")
            },
        ];
        let s = score_records("x", Level::L3, false, &sets, &recs, 0, Verdict::Unachievable, &r);
        assert!(s.success);
        assert_eq!((s.completed_necessary, s.total_required, s.redundant), (1, 1, 1));
        assert_eq!((s.cyber_correct, s.cyber_total), (0, 1));
        let s = score_records("x", Level::L3, false, &sets, &recs, 0, Verdict::Achieved, &r);
        assert!(!s.success);
        assert_eq!(s.completed_necessary, 0);
    }

    #[test]
    fn rejected_and_malformed_count_against_accuracy() {
        let sc = Scenario::bundled();
        let r = Resolver::new(&sc);
        let sets = vec![set(vec![inter(ActionKind::Inform, "h-mao", 0)])];
        let mut bad = rec("ACTION Inform | contact=Mao | content=hi");
        bad.exec_outcome = ExecOutcome::Rejected;
        let recs = vec![bad, rec("ACTION Inform | contact=Mao | content=hi")];
        let s = score_records("x", Level::L1, true, &sets, &recs, 2, Verdict::Achieved, &r);
        assert!(s.success);
        assert_eq!((s.cyber_correct, s.cyber_total), (1, 4));
        assert_eq!(s.redundant, 0);
    }
}
