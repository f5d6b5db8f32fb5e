use proptest::prelude::*;
use rgse_core::synth::{generate_task, source_words, target_form, SynthSpec};
use rgse_core::DepGraph;

/// Recursive pre-order: node, then its dependents left to right.
fn visit(g: &DepGraph, heads: &[Option<usize>], v: usize, out: &mut Vec<String>) {
    out.push(target_form(&g.tokens()[v]));
    for d in (0..heads.len()).filter(|&d| heads[d] == Some(v)) {
        visit(g, heads, d, out);
    }
}

fn spec() -> impl Strategy<Value = SynthSpec> {
    (2usize..6, 0usize..8, any::<u64>(), 0.0f64..=1.0).prop_map(|(min_len, extra, seed, locality)| SynthSpec {
        min_len,
        max_len: min_len + extra,
        train: 20,
        test: 5,
        locality,
        seed,
        ..SynthSpec::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn targets_are_preorder_traversals(spec in spec()) {
        let task = generate_task(&spec).unwrap();
        let roots = &source_words(&spec)[..spec.root_words];
        for pair in task.train.iter().chain(&task.test) {
            let g = &pair.source;
            prop_assert!(g.is_tree());
            prop_assert!((spec.min_len..=spec.max_len).contains(&g.len()));
            let heads = g.heads().unwrap();
            let root = g.root().unwrap();
            let mut expected = Vec::new();
            visit(g, &heads, root, &mut expected);
            prop_assert_eq!(&pair.target, &expected);
            for (i, t) in g.tokens().iter().enumerate() {
                prop_assert_eq!(roots.contains(t), i == root);
            }
        }
    }

    #[test]
    fn same_spec_same_corpus(spec in spec()) {
        prop_assert_eq!(generate_task(&spec).unwrap(), generate_task(&spec).unwrap());
    }
}

#[test]
fn full_locality_attaches_neighbours() {
    let spec = SynthSpec {
        locality: 1.0,
        train: 30,
        test: 0,
        ..SynthSpec::default()
    };
    for pair in generate_task(&spec).unwrap().train {
        for e in pair.source.edges() {
            assert_eq!(e.dependent.abs_diff(e.head), 1);
        }
    }
}

#[test]
fn invalid_spec_is_rejected() {
    let spec = SynthSpec {
        min_len: 5,
        max_len: 3,
        ..SynthSpec::default()
    };
    assert!(generate_task(&spec).is_err());
}
