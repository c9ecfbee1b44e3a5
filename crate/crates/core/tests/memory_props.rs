use deskmate::memory::NodeKind;
use deskmate::scenario::Scenario;
use proptest::prelude::*;
use support::graph::{check, ids, op, pick};

mod support;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mutations_keep_the_graph_well_formed(ops in proptest::collection::vec(op(), 1..40)) {
        check(&ops)?;
    }

    #[test]
    fn availability_round_trip_restores_the_graph(h in any::<usize>(), flips in proptest::collection::vec(any::<bool>(), 0..8)) {
        let g0 = Scenario::bundled().fresh_memory().graph().clone();
        let mut g = g0.clone();
        let who = pick(&ids(&g, NodeKind::Human), h);
        let start = g.availability(&who).unwrap();
        for v in flips {
            g.set_availability(&who, v).unwrap();
            for n in g.nodes().filter(|n| n.id != who) {
                prop_assert_eq!(Some(n), g0.node(&n.id));
            }
        }
        g.set_availability(&who, start).unwrap();
        prop_assert_eq!(serde_json::to_string(&g).unwrap(), serde_json::to_string(&g0).unwrap());
    }
}
