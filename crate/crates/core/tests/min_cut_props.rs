use foodcal::segmentation::{min_cut, FlowGraph};
use proptest::prelude::*;

type Edge = (usize, usize, u8, u8);

fn enumerate(n: usize, terminals: &[(u8, u8)], edges: &[Edge]) -> f64 {
    (0u32..1 << n)
        .map(|bits| {
            let s = |i: usize| bits >> i & 1 == 1;
            let t: f64 = (0..n)
                .map(|i| if s(i) { terminals[i].1 } else { terminals[i].0 } as f64)
                .sum();
            let e: f64 = edges
                .iter()
                .map(|&(u, v, uv, vu)| {
                    if s(u) && !s(v) {
                        uv as f64
                    } else if s(v) && !s(u) {
                        vu as f64
                    } else {
                        0.0
                    }
                })
                .sum();
            t + e
        })
        .fold(f64::INFINITY, f64::min)
}

fn graph() -> impl Strategy<Value = (usize, Vec<(u8, u8)>, Vec<Edge>)> {
    (2usize..=10).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec((0u8..30, 0u8..30), n),
            proptest::collection::vec((0..n, 0..n, 0u8..20, 0u8..20), 0..3 * n)
                .prop_map(|es| es.into_iter().filter(|e| e.0 != e.1).collect::<Vec<_>>()),
        )
    })
}

proptest! {
    #[test]
    fn arbitrary_graphs_reach_the_enumerated_minimum((n, terminals, edges) in graph()) {
        let mut g = FlowGraph::new(n);
        for (i, &(s, t)) in terminals.iter().enumerate() {
            g.add_terminal(i, s as f64, t as f64).unwrap();
        }
        for &(u, v, uv, vu) in &edges {
            g.add_edge(u, v, uv as f64, vu as f64).unwrap();
        }
        let cut = min_cut(&g).unwrap();
        let best = enumerate(n, &terminals, &edges);
        prop_assert_eq!(cut.flow, best);
        prop_assert_eq!(g.cut_value(&cut.source_side), best);
    }

    #[test]
    fn fractional_capacities_give_a_consistent_cut(
        caps in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0), 2..40),
    ) {
        let n = caps.len();
        let mut g = FlowGraph::new(n);
        for (i, &(s, t, w)) in caps.iter().enumerate() {
            g.add_terminal(i, s, t).unwrap();
            if i + 1 < n {
                g.add_edge(i, i + 1, w, w).unwrap();
            }
        }
        let cut = min_cut(&g).unwrap();
        let value = g.cut_value(&cut.source_side);
        prop_assert!((cut.flow - value).abs() <= 1e-9 * (1.0 + value));
    }
}
