//! Full translation models.

pub mod hybrid;
pub mod rnmt;

pub use hybrid::{EncoderLayer, HybridTransformer, RgseBlock};
pub use rnmt::{DecodeStep, Memory, RnmtModel};

use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;

use crate::config::{ExperimentConfig, ModelKind};
use crate::encoders::embedding::{BOS, EOS, PAD};
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// A source graph with its token ids and the target ids (without `<s>` and
/// `</s>`).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub graph: DepGraph,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

impl Example {
    pub fn new<S: AsRef<str>>(graph: DepGraph, target: &[S], src_vocab: &Vocab, tgt_vocab: &Vocab) -> Self {
        let src = src_vocab.ids(graph.tokens());
        Example {
            graph,
            src,
            tgt: tgt_vocab.ids(target),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Rnmt(RnmtModel),
    Hybrid(HybridTransformer),
}

impl Model {
    /// Register every parameter of the configured model in `store`.
    pub fn build(config: &ExperimentConfig, store: &mut ParamStore, src_vocab: usize, tgt_vocab: usize, labels: &[String]) -> Result<Self> {
        Ok(match config.model {
            ModelKind::Rnmt => Model::Rnmt(RnmtModel::register(store, config, src_vocab, tgt_vocab, labels)?),
            ModelKind::Hybrid => Model::Hybrid(HybridTransformer::register(store, config, src_vocab, tgt_vocab)?),
        })
    }

    /// Teacher-forced loss of a batch with one source length. Passing `rng`
    /// turns on training-time edge dropout.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&Example], rng: Option<&mut dyn RngCore>) -> Result<Var> {
        match self {
            Model::Rnmt(m) => m.loss(tape, store, batch, rng),
            Model::Hybrid(m) => m.loss(tape, store, batch),
        }
    }

    pub fn greedy_decode(&self, store: &ParamStore, graph: &DepGraph, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::arg("max_len must be at least 1"));
        }
        match self {
            Model::Rnmt(m) => m.greedy_decode(store, graph, src, max_len),
            Model::Hybrid(m) => m.greedy_decode(store, graph, src, max_len),
        }
    }

    pub fn target_vocab(&self) -> usize {
        match self {
            Model::Rnmt(m) => m.target_vocab(),
            Model::Hybrid(m) => m.target_vocab(),
        }
    }
}

/// `(batch, len)` for equal-length graphs whose ids are concatenated in `src`.
pub(crate) fn batch_shape(graphs: &[&DepGraph], src: &[usize]) -> Result<(usize, usize)> {
    let len = graphs.first().map_or(0, |g| g.len());
    if graphs.is_empty() || len == 0 {
        return Err(Error::arg("cannot encode an empty batch"));
    }
    if let Some(g) = graphs.iter().find(|g| g.len() != len) {
        return Err(Error::dim("batch lengths", &[len], &[g.len()]));
    }
    if src.len() != graphs.len() * len {
        return Err(Error::dim("source ids vs graph", &[graphs.len() * len], &[src.len()]));
    }
    Ok((graphs.len(), len))
}

pub(crate) struct TeacherForcing {
    pub steps: usize,
    /// Rows `b * steps + t`: `<s>` then the target, padded.
    pub inputs: Vec<usize>,
    /// Rows `b * steps + t`: the target then `</s>`; `None` on padding.
    pub targets: Vec<Option<usize>>,
}

pub(crate) fn teacher_forcing(batch: &[&Example]) -> TeacherForcing {
    let steps = batch.iter().map(|e| e.tgt.len() + 1).max().unwrap_or(1);
    let mut inputs = Vec::with_capacity(batch.len() * steps);
    let mut targets = Vec::with_capacity(batch.len() * steps);
    for e in batch {
        for t in 0..steps {
            inputs.push(match t {
                0 => BOS,
                t if t <= e.tgt.len() => e.tgt[t - 1],
                _ => PAD,
            });
            targets.push(match t {
                t if t < e.tgt.len() => Some(e.tgt[t]),
                t if t == e.tgt.len() => Some(EOS),
                _ => None,
            });
        }
    }
    TeacherForcing { steps, inputs, targets }
}

/// Index of the first maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
