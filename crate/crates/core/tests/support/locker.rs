//! Random action sequences against the simulator's QR locker.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use deskmate::actions::parse_action;
use deskmate::llm::PersonaMode;
use deskmate::memory::{EntityId, NodeKind};
use deskmate::scenario::Scenario;
use deskmate::sim::{Holder, QrToken, SimEvent, World};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const PEOPLE: [&str; 6] = ["Lee", "Mao", "Wu", "Sun", "Huang", "Chen"];

pub type Step = (u8, usize, usize);

pub fn line(kind: u8, a: usize, b: usize) -> String {
    let p = PEOPLE[a % PEOPLE.len()];
    let q = PEOPLE[b % PEOPLE.len()];
    match kind % 7 {
        0 => format!("ACTION SendQRCode | contact={p}"),
        1 => format!("ACTION WaitInPlace | user={p}"),
        2 => format!("ACTION Move | target_name={p}"),
        3 => format!("ACTION Inquire | contact={p} | question=Do you have a pen I could borrow?"),
        4 => format!("ACTION Inform | contact={p} | content=I'm on my way to pick it up."),
        5 => format!("ACTION Forward | source={p} | target={q}"),
        _ => format!("ACTION Inquire | contact={p} | question=Could you print a file for {q}?"),
    }
}

pub fn case() -> impl Strategy<Value = (BTreeSet<usize>, u64, Vec<Step>)> {
    (
        proptest::collection::btree_set(0usize..PEOPLE.len(), 0..3),
        any::<u64>(),
        proptest::collection::vec((any::<u8>(), any::<usize>(), any::<usize>()), 1..30),
    )
}

fn changes(events: &[SimEvent]) -> Vec<(String, String, String)> {
    events
        .iter()
        .filter_map(|e| match e {
            SimEvent::Change(c) => Some((c.field.clone(), c.old.clone(), c.new.clone())),
            _ => None,
        })
        .collect()
}

/// Every item has exactly one holder, counted from the locker side as well.
pub fn holders_ok(w: &World) -> Result<(), String> {
    let contents = &w.robot().locker_contents;
    let unique: BTreeSet<&EntityId> = contents.iter().collect();
    if unique.len() != contents.len() {
        return Err(format!("duplicate locker entry {contents:?}"));
    }
    for item in w.truth().nodes_of(NodeKind::Item) {
        let in_locker = unique.contains(&item.id);
        match w.holders().get(&item.id) {
            None => return Err(format!("{} has no holder", item.id)),
            Some(Holder::Locker) if !in_locker => return Err(format!("{} lost in locker", item.id)),
            Some(Holder::Person(p)) if in_locker => {
                return Err(format!("{} both with {p} and in the locker", item.id))
            }
            _ => {}
        }
    }
    w.check_conservation()
}

/// Runs one sequence. Returns how many times the locker opened.
pub fn check(unavailable: &BTreeSet<usize>, seed: u64, steps: &[Step]) -> Result<usize, TestCaseError> {
    let scenario = Arc::new(Scenario::bundled());
    let ids: BTreeMap<EntityId, bool> = unavailable
        .iter()
        .map(|i| (EntityId::new(format!("h-{}", PEOPLE[*i].to_lowercase())), false))
        .collect();
    let mut w = World::new(scenario, &ids, PersonaMode::Scripted, seed).unwrap();
    w.begin_episode(&EntityId::new("h-lee"), "Please borrow a pen from Mao and bring it to me.");
    let mut ever_used: BTreeSet<String> = BTreeSet::new();
    let mut openings = 0;
    for &(k, a, b) in steps {
        let before: BTreeMap<String, QrToken> = w.tokens().clone();
        let action = parse_action(&line(k, a, b)).unwrap();
        let r = w.execute(&action).unwrap();
        let ch = changes(&r.events);
        let opened = ch.iter().filter(|c| c.0 == "locker" && c.2 == "open").count();
        let newly_used: Vec<&QrToken> = w
            .tokens()
            .values()
            .filter(|t| t.used && !before.get(&t.token).is_some_and(|b| b.used))
            .collect();
        for t in before.values().filter(|t| t.used) {
            prop_assert!(w.tokens()[&t.token].used, "token {} became unused", t.token);
        }
        prop_assert!(opened <= 1);
        prop_assert_eq!(opened, newly_used.len());
        if let Some(t) = newly_used.first() {
            let b = &before[&t.token];
            prop_assert!(!b.used && !b.revoked, "opened with spent token {}", t.token);
            prop_assert!(!ever_used.contains(&t.token));
            let scanned: Vec<&str> = ch.iter().filter(|c| c.0 == "qr_scan").map(|c| c.2.as_str()).collect();
            prop_assert_eq!(scanned, vec![t.token.as_str()]);
            ever_used.insert(t.token.clone());
        }
        openings += opened;
        prop_assert_eq!(holders_ok(&w), Ok(()));
        let live: Vec<&QrToken> = w.tokens().values().filter(|t| !t.used && !t.revoked).collect();
        let owners: BTreeSet<&EntityId> = live.iter().map(|t| &t.issued_to).collect();
        prop_assert_eq!(owners.len(), live.len(), "two live tokens for one person");
    }
    Ok(openings)
}
