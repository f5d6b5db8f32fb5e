//! Tree-traversal translation task.
//!
//! A source sentence is a random projective dependency tree over nonsense
//! words. Its translation lists the same words, upper-cased, in pre-order:
//! the root first, then each dependent subtree in source order. Word order
//! alone says little about which neighbour is the head, so the target order
//! is hard to predict without the edges.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DataSource;
use crate::error::{Error, Result};
use crate::graph::DepGraph;

const ONSETS: [&str; 13] = ["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub test: usize,
    /// Probability that a subtree's root is the token adjacent to its head;
    /// otherwise it is drawn uniformly from the span.
    pub locality: f64,
    /// Roots are drawn from the first `root_words` words and other tokens from
    /// the rest. Zero lets any word be a root.
    pub root_words: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab: 32,
            min_len: 4,
            max_len: 16,
            train: 2000,
            test: 200,
            locality: 0.5,
            root_words: 8,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn from_source(data: &DataSource) -> Option<Self> {
        match *data {
            DataSource::Synth {
                vocab,
                min_len,
                max_len,
                train,
                test,
                locality,
                root_words,
                seed,
            } => Some(SynthSpec {
                vocab,
                min_len,
                max_len,
                train,
                test,
                locality,
                root_words,
                seed,
            }),
            DataSource::Files { .. } => None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.vocab < 8 {
            return Err(Error::arg(format!("vocabulary of {} words is below the minimum of 8", self.vocab)));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::arg(format!("length range {}..={} is infeasible", self.min_len, self.max_len)));
        }
        if self.root_words >= self.vocab {
            return Err(Error::arg(format!("{} root words leave no other words", self.root_words)));
        }
        if !(0.0..=1.0).contains(&self.locality) {
            return Err(Error::arg(format!("locality {} is not a probability", self.locality)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub source: DepGraph,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub train: Vec<SynthPair>,
    pub test: Vec<SynthPair>,
}

fn syllable(i: usize) -> String {
    format!("{}{}", ONSETS[(i / VOWELS.len()) % ONSETS.len()], VOWELS[i % VOWELS.len()])
}

/// Surface form of source word `i`; distinct for every `i`.
pub fn word(i: usize) -> String {
    let n = ONSETS.len() * VOWELS.len();
    format!("{}{}", syllable(i % n), syllable((i / n + 7 * i) % n))
}

/// Target form of a source word.
pub fn target_form(source: &str) -> String {
    source.to_uppercase()
}

/// Pre-order traversal of a tree: root, then dependents left to right, each
/// followed by its own subtree.
pub fn preorder(graph: &DepGraph) -> Result<Vec<usize>> {
    let heads = graph.heads().ok_or_else(|| Error::arg("traversal needs a single-head tree"))?;
    let root = graph.root().ok_or_else(|| Error::arg("traversal needs a single root"))?;
    let mut children = vec![Vec::new(); heads.len()];
    for (d, h) in heads.iter().enumerate() {
        if let Some(h) = h {
            children[*h].push(d);
        }
    }
    let mut order = Vec::with_capacity(heads.len());
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        order.push(n);
        stack.extend(children[n].iter().rev());
    }
    if order.len() != heads.len() {
        return Err(Error::arg("dependency structure is not a connected tree"));
    }
    Ok(order)
}

/// Target sentence for a source tree.
pub fn traversal_target(graph: &DepGraph) -> Result<Vec<String>> {
    Ok(preorder(graph)?.into_iter().map(|i| target_form(&graph.tokens()[i])).collect())
}

/// Attach a projective subtree covering `lo..hi` to `head`.
fn grow(heads: &mut [Option<usize>], lo: usize, hi: usize, head: usize, locality: f64, rng: &mut ChaCha8Rng) {
    if lo >= hi {
        return;
    }
    let near = if head < lo { lo } else { hi - 1 };
    let r = if rng.random::<f64>() < locality { near } else { rng.random_range(lo..hi) };
    heads[r] = Some(head);
    grow(heads, lo, r, r, locality, rng);
    grow(heads, r + 1, hi, r, locality, rng);
}

fn sentence(spec: &SynthSpec, id: String, rng: &mut ChaCha8Rng) -> Result<SynthPair> {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let root = rng.random_range(0..len);
    let mut heads = vec![None; len];
    grow(&mut heads, 0, root, root, spec.locality, rng);
    grow(&mut heads, root + 1, len, root, spec.locality, rng);
    let tokens = (0..len)
        .map(|i| {
            let w = if spec.root_words == 0 {
                rng.random_range(0..spec.vocab)
            } else if i == root {
                rng.random_range(0..spec.root_words)
            } else {
                rng.random_range(spec.root_words..spec.vocab)
            };
            word(w)
        })
        .collect();
    let source = DepGraph::from_heads(id, tokens, &heads, None)?;
    let target = traversal_target(&source)?;
    Ok(SynthPair { source, target })
}

/// Generate train and test pairs; identical for identical specs.
pub fn generate_task(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = (0..spec.train)
        .map(|i| sentence(spec, format!("train-{i}"), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.test)
        .map(|i| sentence(spec, format!("test-{i}"), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        spec: *spec,
        train,
        test,
    })
}

/// Source-side vocabulary of a spec, root words first.
pub fn source_words(spec: &SynthSpec) -> Vec<String> {
    (0..spec.vocab).map(word).collect()
}

/// Target-side vocabulary of a spec.
pub fn target_words(spec: &SynthSpec) -> Vec<String> {
    (0..spec.vocab).map(|i| target_form(&word(i))).collect()
}

impl SynthPair {
    pub fn source_tokens(&self) -> Vec<String> {
        self.source.tokens().to_vec()
    }

    pub fn reference(&self) -> String {
        self.target.join(" ")
    }
}

impl core::fmt::Display for SynthPair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} => {}", self.source.tokens().join(" "), self.reference())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            train: 60,
            test: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn words_are_distinct() {
        let mut w: Vec<String> = (0..500).map(word).collect();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), 500);
    }

    #[test]
    fn two_token_sentence_has_one_target() {
        let g = DepGraph::from_heads("s", vec!["ba".into(), "ke".into()], &[None, Some(0)], None).unwrap();
        assert_eq!(traversal_target(&g).unwrap(), vec!["BA", "KE"]);
        let g = DepGraph::from_heads("s", vec!["ba".into(), "ke".into()], &[Some(1), None], None).unwrap();
        assert_eq!(traversal_target(&g).unwrap(), vec!["KE", "BA"]);
    }

    #[test]
    fn regeneration_is_identical() {
        assert_eq!(generate_task(&small()).unwrap(), generate_task(&small()).unwrap());
        let other = SynthSpec { seed: 8, ..small() };
        assert_ne!(generate_task(&small()).unwrap(), generate_task(&other).unwrap());
    }

    #[test]
    fn sentences_are_rooted_trees_in_range() {
        let c = generate_task(&small()).unwrap();
        let roots: Vec<String> = (0..8).map(word).collect();
        for p in c.train.iter().chain(&c.test) {
            assert!(p.source.is_tree());
            assert!((4..=16).contains(&p.source.len()));
            let r = p.source.root().unwrap();
            assert!(roots.contains(&p.source.tokens()[r]));
            assert_eq!(p.target.len(), p.source.len());
        }
    }

    #[test]
    fn infeasible_specs_rejected() {
        assert!(generate_task(&SynthSpec { vocab: 7, ..small() }).is_err());
        assert!(generate_task(&SynthSpec { min_len: 1, ..small() }).is_err());
        assert!(generate_task(&SynthSpec { min_len: 5, max_len: 4, ..small() }).is_err());
    }
}
