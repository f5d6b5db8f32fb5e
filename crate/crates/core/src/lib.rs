//! Recurrent graph syntax encoder (RGSE) and the machinery around it.
//!
//! The crate is `no_std` with `alloc`: everything here is pure computation over
//! in-memory values. File formats, configuration files and the command line live
//! in the companion `rgse` crate.
//!
//! Layout:
//! - [`tensor`], [`tape`], [`params`], [`optim`], [`gradcheck`]: dense f64 math with
//!   reverse-mode gradients.
//! - [`graph`], [`bpe`]: dependency graphs, temporal edge queries, subword splitting.
//! - [`rgse`]: the graph-recurrent layer (edge integration, bidirectional GRU
//!   propagation, residual combination).
//! - [`encoders`]: BiGRU, self-attention block, syntactic GCN.
//! - [`models`], [`config`]: attentional RNMT and the hybrid Transformer.
//! - [`synth`], [`train`], [`bleu`], [`eval`]: toy corpora, training, evaluation.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod bleu;
pub mod bpe;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod optim;
pub mod params;
pub mod rgse;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{DepGraph, EdgeFilter, EdgeRef, Temporal, Traversal};
pub use params::ParamStore;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
