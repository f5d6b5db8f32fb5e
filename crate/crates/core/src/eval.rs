//! Decoding-based evaluation: BLEU, token accuracy, length buckets and
//! paired arm comparisons.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::bleu::bleu4;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{Example, Model};
use crate::params::ParamStore;

/// Upper bounds of the default buckets `(0,10], (10,20], ..., (50,∞)`.
pub const DEFAULT_BOUNDARIES: [usize; 5] = [10, 20, 30, 40, 50];

/// Fraction of reference positions whose token the candidate reproduces at
/// the same position.
pub fn token_accuracy<S: PartialEq, C: AsRef<[S]>, R: AsRef<[S]>>(candidates: &[C], references: &[R]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::arg(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (c, r) in candidates.iter().zip(references) {
        let (c, r) = (c.as_ref(), r.as_ref());
        total += r.len();
        hits += c.iter().zip(r).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return Err(Error::arg("token accuracy needs non-empty references"));
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    /// Exclusive lower bound on source length.
    pub lower: usize,
    /// Inclusive upper bound; `None` is unbounded.
    pub upper: Option<usize>,
    pub count: usize,
    /// `None` when the bucket is empty.
    pub bleu: Option<f64>,
}

impl Bucket {
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("({},{}]", self.lower, u),
            None => format!("({},inf)", self.lower),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub buckets: Vec<Bucket>,
    pub token_accuracy: f64,
    pub loss: Option<f64>,
    pub fingerprint: String,
}

fn check_boundaries(boundaries: &[usize]) -> Result<()> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.first() == Some(&0) {
        return Err(Error::arg(format!("bucket boundaries {boundaries:?} must be positive and strictly increasing")));
    }
    Ok(())
}

/// Split scored sentences into length buckets. `lengths[i]` is the source
/// length of pair `i`.
pub fn bucket_scores<S: Ord, C: AsRef<[S]>, R: AsRef<[S]>>(
    lengths: &[usize],
    candidates: &[C],
    references: &[R],
    boundaries: &[usize],
) -> Result<Vec<Bucket>> {
    check_boundaries(boundaries)?;
    if lengths.len() != candidates.len() || candidates.len() != references.len() {
        return Err(Error::arg("lengths, candidates and references must align"));
    }
    let mut buckets = Vec::with_capacity(boundaries.len() + 1);
    let mut lower = 0;
    for upper in boundaries.iter().copied().map(Some).chain([None]) {
        let members: Vec<usize> = (0..lengths.len())
            .filter(|&i| lengths[i] > lower && upper.is_none_or(|u| lengths[i] <= u))
            .collect();
        let bleu = if members.is_empty() {
            None
        } else {
            let c: Vec<&[S]> = members.iter().map(|&i| candidates[i].as_ref()).collect();
            let r: Vec<&[S]> = members.iter().map(|&i| references[i].as_ref()).collect();
            Some(bleu4(&c, &r)?)
        };
        buckets.push(Bucket {
            lower,
            upper,
            count: members.len(),
            bleu,
        });
        lower = upper.unwrap_or(lower);
    }
    Ok(buckets)
}

/// Greedy decode limit for a source of `len` tokens.
pub fn decode_limit(len: usize) -> usize {
    2 * len + 2
}

/// Greedy outputs for every example, in order.
pub fn decode_all(model: &Model, store: &ParamStore, examples: &[Example]) -> Result<Vec<Vec<usize>>> {
    examples
        .iter()
        .map(|e| model.greedy_decode(store, &e.graph, &e.src, decode_limit(e.src.len())))
        .collect()
}

/// Decode the test set and score it overall and per source-length bucket.
pub fn length_bucket_eval(model: &Model, store: &ParamStore, examples: &[Example], boundaries: &[usize]) -> Result<EvalReport> {
    check_boundaries(boundaries)?;
    let outputs = decode_all(model, store, examples)?;
    report_from_outputs(examples, &outputs, boundaries)
}

pub fn report_from_outputs(examples: &[Example], outputs: &[Vec<usize>], boundaries: &[usize]) -> Result<EvalReport> {
    let refs: Vec<&[usize]> = examples.iter().map(|e| e.tgt.as_slice()).collect();
    let lengths: Vec<usize> = examples.iter().map(|e| e.src.len()).collect();
    Ok(EvalReport {
        bleu: bleu4(outputs, &refs)?,
        buckets: bucket_scores(&lengths, outputs, &refs, boundaries)?,
        token_accuracy: token_accuracy(outputs, &refs)?,
        loss: None,
        fingerprint: String::new(),
    })
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Outcome of one arm trained with one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub accuracy: f64,
    pub bleu: f64,
    /// Per-epoch training losses.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbRow {
    /// `"a"` or `"b"`.
    pub arm: &'static str,
    pub seed: u64,
    pub result: ArmResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbReport {
    pub rows: Vec<AbRow>,
    /// Keys that differ between the arms.
    pub differing: Vec<String>,
}

impl AbReport {
    fn arm(&self, arm: &str, f: impl Fn(&ArmResult) -> f64) -> (f64, f64) {
        let xs: Vec<f64> = self.rows.iter().filter(|r| r.arm == arm).map(|r| f(&r.result)).collect();
        mean_sd(&xs)
    }

    pub fn accuracy(&self, arm: &str) -> (f64, f64) {
        self.arm(arm, |r| r.accuracy)
    }

    pub fn bleu(&self, arm: &str) -> (f64, f64) {
        self.arm(arm, |r| r.bleu)
    }
}

/// Train both arms on every seed through `run` and collect the results.
/// The arms may differ only in `intended` keys; seeds come from `seeds`.
pub fn ab_compare(
    a: &ExperimentConfig,
    b: &ExperimentConfig,
    intended: &[&str],
    seeds: &[u64],
    mut run: impl FnMut(&ExperimentConfig) -> Result<ArmResult>,
) -> Result<AbReport> {
    if seeds.len() < 3 {
        return Err(Error::arg(format!("a paired comparison needs at least 3 trials, got {}", seeds.len())));
    }
    let differing = a.diff(b);
    let unintended: Vec<&String> = differing.iter().filter(|k| !intended.contains(&k.as_str())).collect();
    if !unintended.is_empty() {
        let list: Vec<&str> = unintended.iter().map(|s| s.as_str()).collect();
        return Err(Error::config(list.join(","), format!("arms differ in unintended fields: {}", list.join(", "))));
    }
    let mut rows = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        for (arm, cfg) in [("a", a), ("b", b)] {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            rows.push(AbRow {
                arm,
                seed,
                result: run(&cfg)?,
            });
        }
    }
    Ok(AbReport { rows, differing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rgse::Variant;
    use alloc::vec;

    #[test]
    fn accuracy_is_positional() {
        let c = vec![vec![1, 2, 3], vec![4]];
        let r = vec![vec![1, 3, 3], vec![4, 5]];
        assert_eq!(token_accuracy(&c, &r).unwrap(), 3.0 / 5.0);
    }

    #[test]
    fn single_bucket_matches_corpus_bleu() {
        let c = vec![vec![1, 2, 3, 4, 5], vec![1, 2, 3, 9, 9]];
        let r = vec![vec![1, 2, 3, 4, 5], vec![1, 2, 3, 4, 5]];
        let b = bucket_scores(&[5, 5], &c, &r, &[]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].bleu.unwrap(), bleu4(&c, &r).unwrap());
    }

    #[test]
    fn empty_bucket_has_no_score() {
        let c = vec![vec![1, 2], vec![3, 4]];
        let b = bucket_scores(&[3, 10], &c, &c, &[10, 20]).unwrap();
        assert_eq!((b[0].count, b[1].count, b[2].count), (2, 0, 0));
        assert_eq!(b[1].bleu, None);
        assert_eq!(b[1].label(), "(10,20]");
        assert_eq!(b[2].label(), "(20,inf)");
        assert!(bucket_scores(&[1], &c[..1], &c[..1], &[5, 5]).is_err());
    }

    #[test]
    fn mean_and_sd() {
        assert_eq!(mean_sd(&[1.0, 2.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn unintended_difference_is_rejected() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.variant = Variant::BiPast;
        b.d_hidden = 7;
        let err = ab_compare(&a, &b, &["rgse.variant"], &[1, 2, 3], |_| unreachable!()).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "model.d_hidden"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn identical_arms_give_identical_rows() {
        let a = ExperimentConfig::default();
        let report = ab_compare(&a, &a, &[], &[4, 5, 6], |c| {
            Ok(ArmResult {
                accuracy: c.seed as f64,
                bleu: 0.0,
                losses: vec![],
            })
        })
        .unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.accuracy("a"), report.accuracy("b"));
        assert!(ab_compare(&a, &a, &[], &[1, 2], |_| unreachable!()).is_err());
    }
}
