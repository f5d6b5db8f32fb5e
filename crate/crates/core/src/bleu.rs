//! Corpus-level BLEU-4.

use alloc::collections::BTreeMap;
use alloc::format;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics and the resulting score.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    /// Clipped matches per order 1..=4.
    pub matches: [usize; MAX_ORDER],
    /// Candidate n-gram counts per order 1..=4.
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    /// Modified precision of order `n` (1-based); zero when the candidates
    /// have no n-grams of that order.
    pub fn precision(&self, n: usize) -> f64 {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        }
    }

    /// `exp(1 - r/c)` when `c < r`, else 1.
    pub fn brevity_penalty(&self) -> f64 {
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        if self.candidate_len == 0 {
            0.0
        } else if c < r {
            libm::exp(1.0 - r / c)
        } else {
            1.0
        }
    }

    /// Geometric mean of the four precisions times the brevity penalty,
    /// without smoothing.
    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 1..=MAX_ORDER {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += libm::log(p);
        }
        self.brevity_penalty() * libm::exp(log_sum / MAX_ORDER as f64)
    }

    fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }
}

fn ngram_counts<S: Ord>(tokens: &[S], n: usize) -> BTreeMap<&[S], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Statistics of one candidate against one reference.
pub fn sentence_stats<S: Ord>(candidate: &[S], reference: &[S]) -> BleuStats {
    let mut stats = BleuStats {
        matches: [0; MAX_ORDER],
        totals: [0; MAX_ORDER],
        candidate_len: candidate.len(),
        reference_len: reference.len(),
    };
    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        stats.totals[n - 1] = candidate.len().saturating_sub(n - 1);
        stats.matches[n - 1] = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
    }
    stats
}

/// Accumulated statistics over a corpus of (candidate, reference) pairs.
pub fn corpus_stats<S: Ord, C: AsRef<[S]>, R: AsRef<[S]>>(candidates: &[C], references: &[R]) -> Result<BleuStats> {
    if candidates.is_empty() {
        return Err(Error::arg("BLEU needs at least one candidate"));
    }
    if candidates.len() != references.len() {
        return Err(Error::arg(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut total = BleuStats {
        matches: [0; MAX_ORDER],
        totals: [0; MAX_ORDER],
        candidate_len: 0,
        reference_len: 0,
    };
    for (c, r) in candidates.iter().zip(references) {
        total.add(&sentence_stats(c.as_ref(), r.as_ref()));
    }
    Ok(total)
}

/// Corpus BLEU-4 in `[0, 1]`.
pub fn bleu4<S: Ord, C: AsRef<[S]>, R: AsRef<[S]>>(candidates: &[C], references: &[R]) -> Result<f64> {
    Ok(corpus_stats(candidates, references)?.score())
}

/// Add-one smoothed sentence BLEU for inspecting single outputs. Never use
/// it for reported numbers.
pub fn sentence_bleu_smoothed<S: Ord>(candidate: &[S], reference: &[S]) -> f64 {
    let s = sentence_stats(candidate, reference);
    if s.candidate_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let (m, t) = if n == 0 {
            (s.matches[0] as f64, s.totals[0] as f64)
        } else {
            (s.matches[n] as f64 + 1.0, s.totals[n] as f64 + 1.0)
        };
        if m == 0.0 {
            return 0.0;
        }
        log_sum += libm::log(m / t);
    }
    s.brevity_penalty() * libm::exp(log_sum / MAX_ORDER as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_one() {
        let c = vec![toks("a b c d e"), toks("x y z w")];
        assert_eq!(bleu4(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(bleu4(&[toks("a b c d")], &[toks("e f g h")]).unwrap(), 0.0);
    }

    #[test]
    fn clipped_unigrams() {
        let s = corpus_stats(&[toks("the the the the")], &[toks("the cat")]).unwrap();
        assert_eq!(s.precision(1), 0.25);
        assert_eq!(s.precision(2), 0.0);
        assert_eq!(s.score(), 0.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let s = corpus_stats(&[toks("a b c d")], &[toks("a b c d e f g h")]).unwrap();
        assert_eq!(s.brevity_penalty(), libm::exp(1.0 - 2.0));
        assert!((s.score() - libm::exp(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let empty: [Vec<&str>; 0] = [];
        assert!(bleu4(&empty, &empty).is_err());
        assert!(bleu4(&[toks("a")], &[toks("a"), toks("b")]).is_err());
    }

    #[test]
    fn smoothed_is_positive_on_partial_match() {
        assert!(sentence_bleu_smoothed(&toks("a b x"), &toks("a b c")) > 0.0);
        assert_eq!(sentence_bleu_smoothed(&toks("a b c d"), &toks("a b c d")), 1.0);
    }
}
