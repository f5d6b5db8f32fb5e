//! Byte-pair encoding: greedy most-frequent-pair merges over a word list.
//!
//! Words start as characters with an end-of-word marker glued to the last
//! character. Ties between equally frequent pairs go to the lexicographically
//! smallest pair, which makes learning deterministic. Segmented pieces use the
//! `@@` continuation suffix on every piece but the last.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::SubwordMap;

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: BTreeMap<(String, String), usize>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learn up to `merges` merge operations from whitespace-separated text.
pub fn learn_bpe(corpus: &[String], merges: usize) -> Result<BpeModel> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::arg("cannot learn BPE from an empty corpus"));
    }
    let mut vocab: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (initial_symbols(w), c)).collect();
    let mut table = Vec::new();
    for _ in 0..merges {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, c) in &vocab {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        // first maximum in key order is the lexicographically smallest pair
        let Some((&(l, r), _)) = pairs.iter().fold(None, |best: Option<(&(&str, &str), &usize)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        }) else {
            break;
        };
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in vocab.iter_mut() {
            *syms = merge_pair(syms, &l, &r);
        }
        table.push((l, r));
    }
    Ok(BpeModel::from_merges(table))
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let mut ranks = BTreeMap::new();
        for (i, m) in merges.iter().enumerate() {
            ranks.entry(m.clone()).or_insert(i);
        }
        BpeModel { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Segment one word into pieces (`@@` on all but the last).
    pub fn segment(&self, word: &str) -> Vec<String> {
        if word.is_empty() {
            return Vec::new();
        }
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min();
            match best {
                Some((_, l, r)) => syms = merge_pair(&syms, &l, &r),
                None => break,
            }
        }
        let n = syms.len();
        syms.into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 == n {
                    s.trim_end_matches(END_OF_WORD).to_string()
                } else {
                    format!("{s}{CONTINUATION}")
                }
            })
            .collect()
    }

    /// Piece sequence for a tokenised sentence.
    pub fn subword_map(&self, tokens: &[String]) -> SubwordMap {
        let mut pieces = Vec::new();
        let mut origin = Vec::new();
        for (i, t) in tokens.iter().enumerate() {
            for p in self.segment(t) {
                pieces.push(p);
                origin.push(i);
            }
        }
        SubwordMap { pieces, origin }
    }
}

/// Undo segmentation: join `@@`-suffixed pieces onto their successor.
pub fn join_pieces(pieces: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for p in pieces {
        match p.strip_suffix(CONTINUATION) {
            Some(stem) => cur.push_str(stem),
            None => {
                cur.push_str(p);
                out.push(core::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn corpus(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_merges_splits_to_characters() {
        let m = learn_bpe(&corpus(&["hello world"]), 0).unwrap();
        assert!(m.merges().is_empty());
        assert_eq!(m.segment("abc"), vec!["a@@", "b@@", "c"]);
    }

    #[test]
    fn abab_first_merge() {
        // pairs of a b a b</w>: (a,b)=1, (b,a)=1, (a,b</w>)=1; smallest key wins
        let m = learn_bpe(&corpus(&["abab"]), 1).unwrap();
        assert_eq!(m.merges(), &[("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn frequency_beats_order() {
        // (x,y) and (y,z</w>) tie at 2, (a,x) has 1; the smaller key wins
        let m = learn_bpe(&corpus(&["axy", "xyz xyz"]), 1).unwrap();
        assert_eq!(m.merges()[0], ("x".to_string(), "y".to_string()));
    }

    #[test]
    fn trained_word_reassembles() {
        let m = learn_bpe(&corpus(&["ab"]), 5).unwrap();
        assert_eq!(m.merges(), &[("a".to_string(), format!("b{END_OF_WORD}"))]);
        assert_eq!(m.segment("ab"), vec!["ab"]);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(learn_bpe(&[], 3).is_err());
        assert!(learn_bpe(&corpus(&["   "]), 3).is_err());
    }

    #[test]
    fn pieces_rejoin() {
        let m = learn_bpe(&corpus(&["bananas banana nanas"]), 4).unwrap();
        let toks = corpus(&["bananas", "eat", "x"]);
        let map = m.subword_map(&toks);
        assert_eq!(join_pieces(&map.pieces), toks);
    }
}
