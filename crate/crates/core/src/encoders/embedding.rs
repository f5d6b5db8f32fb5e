use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id map with reserved ids for padding, sentence boundaries and unknowns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl Vocab {
    /// Reserved ids first, then unseen tokens in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        let mut sorted: Vec<&str> = tokens.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        for t in sorted {
            v.add(t);
        }
        v
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Vocab::default();
        for t in tokens.iter().skip(RESERVED.len().min(tokens.len())) {
            v.add(t);
        }
        v
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], |s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// `|V| × d` lookup table stored as one parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingTable {
    name: String,
    vocab_size: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn register(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize) -> Result<Self> {
        store.matrix(name, vocab_size, dim)?;
        Ok(EmbeddingTable {
            name: name.to_string(),
            vocab_size,
            dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Rows for `ids`; out-of-range ids read the unknown-token row.
    pub fn lookup(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let table = tape.param(store, &self.name)?;
        let clamped: Vec<usize> = ids.iter().map(|&i| if i < self.vocab_size { i } else { UNK }).collect();
        tape.gather_rows(table, &clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unknowns() {
        let v = Vocab::build(["b", "a", "b"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.token(999), "<unk>");
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec()), v);
    }

    #[test]
    fn lookup_returns_rows() {
        let mut s = ParamStore::new(2);
        let e = EmbeddingTable::register(&mut s, "emb", 5, 3).unwrap();
        let mut t = Tape::new();
        let x = e.lookup(&mut t, &s, &[4, 0, 17]).unwrap();
        let table = s.get("emb").unwrap().data();
        assert_eq!(t.row(x, 0), &table[12..15]);
        assert_eq!(t.row(x, 1), &table[0..3]);
        assert_eq!(t.row(x, 2), &table[3 * UNK..3 * UNK + 3]);
    }
}
