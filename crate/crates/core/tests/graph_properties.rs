use std::collections::BTreeSet;

use proptest::prelude::*;
use rgse_core::graph::{apply_subwords, SubwordMap};
use rgse_core::{DepGraph, EdgeFilter, Temporal, Traversal};

/// A random tree: `order[0]` is the root and every later node hangs off an
/// earlier one.
fn tree() -> impl Strategy<Value = DepGraph> {
    (1usize..12)
        .prop_flat_map(|n| (Just((0..n).collect::<Vec<_>>()).prop_shuffle(), prop::collection::vec(any::<u32>(), n)))
        .prop_map(|(order, picks)| {
            let n = order.len();
            let mut heads = vec![None; n];
            for k in 1..n {
                heads[order[k]] = Some(order[picks[k] as usize % k]);
            }
            let tokens = (0..n).map(|i| format!("w{i}")).collect();
            DepGraph::from_heads("t", tokens, &heads, None).unwrap()
        })
}

fn sources(g: &DepGraph, j: usize, t: Traversal, f: EdgeFilter) -> BTreeSet<usize> {
    g.incoming_edges(j, t, f).unwrap().iter().map(|e| e.source_position).collect()
}

fn components(g: &DepGraph) -> usize {
    let mut seen = vec![false; g.len()];
    let mut count = 0;
    for start in 0..g.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    count
}

proptest! {
    #[test]
    fn past_and_future_partition_total(g in tree()) {
        for j in 0..g.len() {
            for t in [Traversal::Forward, Traversal::Backward] {
                let total = sources(&g, j, t, EdgeFilter::Total);
                let past = sources(&g, j, t, EdgeFilter::PastOnly);
                let future = sources(&g, j, t, EdgeFilter::FutureOnly);
                prop_assert_eq!(&past | &future, total);
                prop_assert_eq!(past.intersection(&future).copied().collect::<Vec<_>>(), vec![j]);
            }
        }
    }

    #[test]
    fn traversal_swaps_past_and_future(g in tree()) {
        for j in 0..g.len() {
            prop_assert_eq!(
                sources(&g, j, Traversal::Forward, EdgeFilter::PastOnly),
                sources(&g, j, Traversal::Backward, EdgeFilter::FutureOnly)
            );
            for e in g.incoming_edges(j, Traversal::Forward, EdgeFilter::Total).unwrap() {
                let expected = match e.source_position.cmp(&j) {
                    std::cmp::Ordering::Less => Temporal::Past,
                    std::cmp::Ordering::Equal => Temporal::SelfLoop,
                    std::cmp::Ordering::Greater => Temporal::Future,
                };
                prop_assert_eq!(e.temporal, expected);
            }
        }
    }

    #[test]
    fn total_edges_count_each_arc_twice_plus_self(g in tree()) {
        for t in [Traversal::Forward, Traversal::Backward] {
            let total: usize = (0..g.len()).map(|j| sources(&g, j, t, EdgeFilter::Total).len()).sum();
            prop_assert_eq!(total, 2 * (g.len() - 1) + g.len());
        }
    }

    #[test]
    fn permutation_round_trips(g in tree(), seed in any::<u64>()) {
        let n = g.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let p = g.permuted(&perm).unwrap();
        prop_assert!(p.is_tree());
        prop_assert_eq!(p.permuted(&inverse).unwrap(), g);
    }

    #[test]
    fn subword_graph_keeps_reachability(g in tree(), splits in prop::collection::vec(1usize..4, 12)) {
        let mut pieces = Vec::new();
        let mut origin = Vec::new();
        for (t, tok) in g.tokens().iter().enumerate() {
            for k in 0..splits[t] {
                pieces.push(format!("{tok}@{k}"));
                origin.push(t);
            }
        }
        let map = SubwordMap { pieces, origin };
        let s = apply_subwords(&g, &map).unwrap();
        prop_assert_eq!(s.len(), map.pieces.len());
        for e in g.edges() {
            for pd in map.pieces_of(e.dependent) {
                for ph in map.pieces_of(e.head) {
                    prop_assert!(s.neighbors(pd).contains(&ph));
                }
            }
        }
        if g.len() > 1 {
            prop_assert_eq!(components(&s), 1);
        }
    }
}

#[test]
fn identity_subwords_reproduce_the_graph() {
    let g = DepGraph::from_heads("t", ["a", "b", "c"].map(String::from).to_vec(), &[Some(1), None, Some(1)], None).unwrap();
    let s = apply_subwords(&g, &SubwordMap::identity(g.tokens())).unwrap();
    assert_eq!(s.edges(), g.edges());
}

#[test]
fn missing_piece_is_a_coverage_error() {
    let g = DepGraph::from_heads("t", ["a", "b"].map(String::from).to_vec(), &[Some(1), None], None).unwrap();
    let map = SubwordMap {
        pieces: vec!["a".into()],
        origin: vec![0],
    };
    assert!(matches!(apply_subwords(&g, &map), Err(rgse_core::Error::Coverage { token: 1 })));
}
