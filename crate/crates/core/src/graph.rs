//! Dependency graphs and the edge sets read by graph layers.
//!
//! A parse edge `(i ↦ j)` says token `i` depends on head `j`. Graph layers
//! read a symmetrised neighbourhood: node `j` receives from its dependents,
//! from its head, and from itself. Each received edge is tagged past/future
//! relative to the scan direction of the reading layer.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DepEdge {
    pub dependent: usize,
    pub head: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepGraph {
    sentence_id: String,
    tokens: Vec<String>,
    edges: Vec<DepEdge>,
    /// Sorted, de-duplicated non-self neighbours of each node.
    neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Traversal {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeFilter {
    Total,
    PastOnly,
    FutureOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Temporal {
    Past,
    Future,
    SelfLoop,
}

/// An edge from encoder state `source_position` into graph node `target_position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeRef {
    pub source_position: usize,
    pub target_position: usize,
    pub temporal: Temporal,
}

impl DepGraph {
    /// Build from an explicit edge list. Duplicate `(dependent, head)` pairs
    /// are merged; self pairs and out-of-range indices are rejected.
    pub fn new(sentence_id: impl Into<String>, tokens: Vec<String>, edges: Vec<DepEdge>) -> Result<Self> {
        let n = tokens.len();
        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            if e.dependent >= n || e.head >= n {
                return Err(Error::arg(format!(
                    "edge ({} -> {}) out of range for {n} tokens",
                    e.dependent, e.head
                )));
            }
            if e.dependent == e.head {
                return Err(Error::arg(format!("self edge at token {}", e.dependent)));
            }
            if seen.insert((e.dependent, e.head)) {
                kept.push(e);
            }
        }
        let mut neighbors = vec![BTreeSet::new(); n];
        for e in &kept {
            neighbors[e.head].insert(e.dependent);
            neighbors[e.dependent].insert(e.head);
        }
        Ok(DepGraph {
            sentence_id: sentence_id.into(),
            tokens,
            edges: kept,
            neighbors: neighbors.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Build from a head array (`None` marks a root). Labels default to `dep`.
    pub fn from_heads(
        sentence_id: impl Into<String>,
        tokens: Vec<String>,
        heads: &[Option<usize>],
        labels: Option<&[String]>,
    ) -> Result<Self> {
        if heads.len() != tokens.len() {
            return Err(Error::dim("from_heads", &[tokens.len()], &[heads.len()]));
        }
        if let Some(l) = labels {
            if l.len() != tokens.len() {
                return Err(Error::dim("from_heads labels", &[tokens.len()], &[l.len()]));
            }
        }
        let edges = heads
            .iter()
            .enumerate()
            .filter_map(|(i, h)| {
                h.map(|head| DepEdge {
                    dependent: i,
                    head,
                    label: labels.map_or_else(|| String::from("dep"), |l| l[i].clone()),
                })
            })
            .collect();
        Self::new(sentence_id, tokens, edges)
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    /// Non-self neighbours of `j` in either direction.
    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    /// Head of each token when every token has at most one.
    pub fn heads(&self) -> Option<Vec<Option<usize>>> {
        let mut heads = vec![None; self.len()];
        for e in &self.edges {
            if heads[e.dependent].replace(e.head).is_some() {
                return None;
            }
        }
        Some(heads)
    }

    /// Exactly one root, one head per other token, no cycles.
    pub fn is_tree(&self) -> bool {
        let Some(heads) = self.heads() else { return false };
        if heads.iter().filter(|h| h.is_none()).count() != 1 {
            return false;
        }
        (0..self.len()).all(|start| {
            let mut cur = start;
            for _ in 0..=self.len() {
                match heads[cur] {
                    None => return true,
                    Some(h) => cur = h,
                }
            }
            false
        })
    }

    pub fn root(&self) -> Option<usize> {
        let heads = self.heads()?;
        let mut roots = heads.iter().enumerate().filter(|(_, h)| h.is_none());
        let r = roots.next()?.0;
        roots.next().is_none().then_some(r)
    }

    /// Label of the parse edge `(dependent ↦ head)`, if present.
    pub fn label(&self, dependent: usize, head: usize) -> Option<&str> {
        self.edges
            .iter()
            .find(|e| e.dependent == dependent && e.head == head)
            .map(|e| e.label.as_str())
    }

    /// The edge set `E_in(s_j)`: dependents of `j`, the head of `j`, and the
    /// self edge, tagged relative to `traversal` and filtered. The self edge
    /// survives every filter. Ordered by source position.
    pub fn incoming_edges(&self, j: usize, traversal: Traversal, filter: EdgeFilter) -> Result<Vec<EdgeRef>> {
        if j >= self.len() {
            return Err(Error::arg(format!("position {j} out of range for {} tokens", self.len())));
        }
        let mut sources: Vec<usize> = self.neighbors[j].clone();
        sources.push(j);
        sources.sort_unstable();
        Ok(sources
            .into_iter()
            .map(|i| EdgeRef {
                source_position: i,
                target_position: j,
                temporal: temporal(i, j, traversal),
            })
            .filter(|e| match (filter, e.temporal) {
                (_, Temporal::SelfLoop) | (EdgeFilter::Total, _) => true,
                (EdgeFilter::PastOnly, t) => t == Temporal::Past,
                (EdgeFilter::FutureOnly, t) => t == Temporal::Future,
            })
            .collect())
    }

    /// Reorder tokens: old position `i` moves to `perm[i]`. Edges follow
    /// their tokens.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != n || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::arg("not a permutation of token positions"));
        }
        let mut tokens = vec![String::new(); n];
        for (i, t) in self.tokens.iter().enumerate() {
            tokens[perm[i]] = t.clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|e| DepEdge {
                dependent: perm[e.dependent],
                head: perm[e.head],
                label: e.label.clone(),
            })
            .collect();
        Self::new(self.sentence_id.clone(), tokens, edges)
    }

    /// Same tokens with every parse edge removed.
    pub fn without_edges(&self) -> Self {
        DepGraph {
            sentence_id: self.sentence_id.clone(),
            tokens: self.tokens.clone(),
            edges: Vec::new(),
            neighbors: vec![Vec::new(); self.len()],
        }
    }
}

pub fn temporal(source: usize, target: usize, traversal: Traversal) -> Temporal {
    use core::cmp::Ordering::*;
    match (source.cmp(&target), traversal) {
        (Equal, _) => Temporal::SelfLoop,
        (Less, Traversal::Forward) | (Greater, Traversal::Backward) => Temporal::Past,
        _ => Temporal::Future,
    }
}

/// Subword pieces of a sentence and the token each piece came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordMap {
    pub pieces: Vec<String>,
    pub origin: Vec<usize>,
}

impl SubwordMap {
    /// Every token a single piece.
    pub fn identity(tokens: &[String]) -> Self {
        SubwordMap {
            pieces: tokens.to_vec(),
            origin: (0..tokens.len()).collect(),
        }
    }

    pub fn pieces_of(&self, token: usize) -> impl Iterator<Item = usize> + '_ {
        self.origin
            .iter()
            .enumerate()
            .filter(move |(_, &o)| o == token)
            .map(|(p, _)| p)
    }
}

/// Lift a word graph to subword pieces. Each parse edge `(i ↦ j)` is copied
/// to every `(piece of i ↦ piece of j)` pair, so pieces can carry several
/// heads.
pub fn apply_subwords(graph: &DepGraph, map: &SubwordMap) -> Result<DepGraph> {
    if map.pieces.len() != map.origin.len() {
        return Err(Error::dim("apply_subwords", &[map.pieces.len()], &[map.origin.len()]));
    }
    let n = graph.len();
    if let Some(&bad) = map.origin.iter().find(|&&o| o >= n) {
        return Err(Error::arg(format!("piece origin {bad} out of range for {n} tokens")));
    }
    let mut by_token: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, &o) in map.origin.iter().enumerate() {
        by_token[o].push(p);
    }
    if let Some(token) = by_token.iter().position(Vec::is_empty) {
        return Err(Error::Coverage { token });
    }
    let mut edges = Vec::new();
    for e in graph.edges() {
        for &pd in &by_token[e.dependent] {
            for &ph in &by_token[e.head] {
                edges.push(DepEdge {
                    dependent: pd,
                    head: ph,
                    label: e.label.clone(),
                });
            }
        }
    }
    DepGraph::new(graph.sentence_id.clone(), map.pieces.clone(), edges)
}
