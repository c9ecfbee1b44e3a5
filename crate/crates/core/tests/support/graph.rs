//! Random mutation sequences against the topological graph.

use std::collections::BTreeMap;

use deskmate::memory::{EntityId, Node, NodeKind, Relation, TopoGraph};
use deskmate::scenario::Scenario;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

#[derive(Debug, Clone)]
pub enum Op {
    Availability(usize, bool),
    Relocate(usize, usize),
    GiveItem(usize, usize),
    AddPerson(u8, usize, bool),
    AddItem(u8, Option<usize>),
    Rename(usize),
    /// Edges of the wrong shape; must fail without touching the graph.
    BadEdge(usize, usize),
    AvailabilityOnItem(usize),
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<usize>(), any::<bool>()).prop_map(|(a, b)| Op::Availability(a, b)),
        (any::<usize>(), any::<usize>()).prop_map(|(a, b)| Op::Relocate(a, b)),
        (any::<usize>(), any::<usize>()).prop_map(|(a, b)| Op::GiveItem(a, b)),
        (0u8..20, any::<usize>(), any::<bool>()).prop_map(|(a, b, c)| Op::AddPerson(a, b, c)),
        (0u8..20, proptest::option::of(any::<usize>())).prop_map(|(a, b)| Op::AddItem(a, b)),
        any::<usize>().prop_map(Op::Rename),
        (any::<usize>(), any::<usize>()).prop_map(|(a, b)| Op::BadEdge(a, b)),
        any::<usize>().prop_map(Op::AvailabilityOnItem),
    ]
}

pub fn ids(g: &TopoGraph, kind: NodeKind) -> Vec<EntityId> {
    g.nodes_of(kind).map(|n| n.id.clone()).collect()
}

pub fn pick(v: &[EntityId], i: usize) -> EntityId {
    v[i % v.len()].clone()
}

pub fn apply(g: &mut TopoGraph, op: &Op) {
    let humans = ids(g, NodeKind::Human);
    let places = ids(g, NodeKind::Location);
    let items = ids(g, NodeKind::Item);
    let movable: Vec<EntityId> = humans
        .iter()
        .chain(ids(g, NodeKind::Facility).iter())
        .cloned()
        .collect();
    match op {
        Op::Availability(h, v) => g.set_availability(&pick(&humans, *h), *v).unwrap(),
        Op::Relocate(e, l) => g.set_location(&pick(&movable, *e), &pick(&places, *l)).unwrap(),
        Op::GiveItem(i, h) => g.set_owner(&pick(&items, *i), &pick(&humans, *h)).unwrap(),
        Op::AddPerson(n, l, v) => {
            let id = EntityId::new(format!("h-new{n}"));
            g.upsert_node(Node::human(id.clone(), format!("New {n}"), *v)).unwrap();
            g.set_location(&id, &pick(&places, *l)).unwrap();
        }
        Op::AddItem(n, owner) => {
            let id = EntityId::new(format!("i-new{n}"));
            g.upsert_node(Node::item(id.clone(), "pen")).unwrap();
            if let Some(h) = owner {
                g.set_owner(&id, &pick(&humans, *h)).unwrap();
            }
        }
        Op::Rename(h) => {
            let id = pick(&humans, *h);
            let old = g.node(&id).unwrap().clone();
            g.upsert_node(Node::human(id, format!("{} Jr", old.display_name), old.availability.unwrap()))
                .unwrap();
        }
        Op::BadEdge(a, b) => {
            let before = g.clone();
            // item placed at a location, and a person owning a person
            assert!(g.set_location(&pick(&items, *a), &pick(&places, *b)).is_err());
            assert!(g.set_owner(&pick(&humans, *a), &pick(&humans, *b)).is_err());
            assert!(g.set_location(&pick(&humans, *a), &EntityId::new("loc-nowhere")).is_err());
            assert_eq!(*g, before);
        }
        Op::AvailabilityOnItem(i) => {
            let before = g.clone();
            let mut bad = Node::item(pick(&items, *i), "pen");
            bad.availability = Some(true);
            assert!(g.upsert_node(bad).is_err());
            assert!(g.set_availability(&pick(&items, *i), false).is_err());
            assert_eq!(*g, before);
        }
    }
}

/// Counts edges directly instead of trusting the graph's own checker.
pub fn oracle(g: &TopoGraph) -> Result<(), String> {
    let kinds: BTreeMap<&EntityId, NodeKind> = g.nodes().map(|n| (&n.id, n.kind)).collect();
    for n in g.nodes() {
        if (n.kind == NodeKind::Human) != n.availability.is_some() {
            return Err(format!("{} availability shape", n.id));
        }
        if n.display_name.trim().is_empty() {
            return Err(format!("{} empty name", n.id));
        }
    }
    let mut located: BTreeMap<&EntityId, usize> = BTreeMap::new();
    let mut owned: BTreeMap<&EntityId, usize> = BTreeMap::new();
    for e in g.edges() {
        let (Some(f), Some(t)) = (kinds.get(&e.from), kinds.get(&e.to)) else {
            return Err(format!("dangling edge {e:?}"));
        };
        match e.relation {
            Relation::LocatedAt => {
                if !matches!(f, NodeKind::Human | NodeKind::Facility) || *t != NodeKind::Location {
                    return Err(format!("bad located_at {e:?}"));
                }
                *located.entry(&e.from).or_default() += 1;
            }
            Relation::Owns => {
                if *f != NodeKind::Item || *t != NodeKind::Human {
                    return Err(format!("bad owns {e:?}"));
                }
                *owned.entry(&e.from).or_default() += 1;
            }
        }
    }
    for n in g.nodes() {
        let loc = located.get(&n.id).copied().unwrap_or(0);
        let own = owned.get(&n.id).copied().unwrap_or(0);
        match n.kind {
            NodeKind::Human | NodeKind::Facility if loc != 1 => return Err(format!("{} located {loc}", n.id)),
            NodeKind::Item if own > 1 => return Err(format!("{} owners {own}", n.id)),
            _ => {}
        }
    }
    Ok(())
}

/// Applies the sequence to the bundled office graph, checking after each op.
pub fn check(ops: &[Op]) -> Result<(), TestCaseError> {
    let mut g = Scenario::bundled().fresh_memory().graph().clone();
    prop_assert_eq!(oracle(&g), Ok(()));
    for op in ops {
        apply(&mut g, op);
        prop_assert!(g.check_invariants().is_ok(), "{:?} after {:?}", g.check_invariants(), op);
        prop_assert_eq!(oracle(&g), Ok(()), "after {:?}", op);
        let owners = g.query_owners("pen");
        prop_assert!(owners.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&owners, &g.query_owners("PEN"));
        for h in ids(&g, NodeKind::Human) {
            prop_assert!(g.query_location(&h).is_ok());
        }
    }
    Ok(())
}
