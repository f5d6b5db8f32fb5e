use std::collections::BTreeMap;

use proptest::prelude::*;
use rgse_core::bleu::{bleu4, corpus_stats, sentence_stats, MAX_ORDER};

fn sentence() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..12)
}

fn corpus() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
    prop::collection::vec((sentence(), sentence()), 1..8)
}

/// Clipped n-gram matches counted with a plain map.
fn clipped(c: &[u8], r: &[u8], n: usize) -> (usize, usize) {
    let count = |s: &[u8]| {
        let mut m: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        if s.len() >= n {
            for i in 0..=s.len() - n {
                *m.entry(s[i..i + n].to_vec()).or_default() += 1;
            }
        }
        m
    };
    let (cm, rm) = (count(c), count(r));
    let matches = cm.iter().map(|(g, k)| (*k).min(*rm.get(g).unwrap_or(&0))).sum();
    (matches, cm.values().sum())
}

proptest! {
    #[test]
    fn bounded(pairs in corpus()) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let b = bleu4(&c, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn identical_corpus_scores_one(c in prop::collection::vec(prop::collection::vec(0u8..6, 4..12), 1..6)) {
        prop_assert_eq!(bleu4(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn order_of_pairs_is_irrelevant(pairs in corpus()) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let (rc, rr): (Vec<_>, Vec<_>) = pairs.into_iter().rev().unzip();
        prop_assert_eq!(corpus_stats(&c, &r).unwrap(), corpus_stats(&rc, &rr).unwrap());
    }

    #[test]
    fn sentence_counts_match_naive(c in sentence(), r in sentence()) {
        let s = sentence_stats(&c, &r);
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped(&c, &r, n);
            prop_assert_eq!((s.matches[n - 1], s.totals[n - 1]), (m, t));
        }
        prop_assert_eq!((s.candidate_len, s.reference_len), (c.len(), r.len()));
    }

    #[test]
    fn disjoint_vocabularies_score_zero(pairs in corpus()) {
        let c: Vec<Vec<u8>> = pairs.iter().map(|(a, _)| a.iter().map(|x| x + 10).collect()).collect();
        let r: Vec<Vec<u8>> = pairs.into_iter().map(|(_, b)| b).collect();
        prop_assert_eq!(bleu4(&c, &r).unwrap(), 0.0);
    }
}

#[test]
fn length_mismatch_is_an_error() {
    let c = vec![vec![1u8]];
    let r: Vec<Vec<u8>> = vec![];
    assert!(bleu4(&c, &r).is_err());
}

#[test]
fn brevity_penalty_value() {
    // 4 of 8 reference tokens, all n-grams matching: BP = exp(1 - 8/4)
    let c = vec![vec![1u8, 2, 3, 4]];
    let r = vec![vec![1u8, 2, 3, 4, 5, 6, 7, 8]];
    let b = bleu4(&c, &r).unwrap();
    assert!((b - (-1.0f64).exp()).abs() < 1e-12);
}
