//! Substrate and comparison encoders.

pub mod attention;
pub mod embedding;
pub mod gcn;
pub mod gru;

pub use attention::{positional_encoding, AttentionBlock, FeedForward, LayerNorm, MultiHeadAttention};
pub use embedding::{EmbeddingTable, Vocab};
pub use gcn::GcnLayer;
pub use gru::{BiGru, GruCell};

use alloc::vec::Vec;

/// Row indices that turn time-major rows (`t * batch + b`) into batch-major
/// rows (`b * len + t`).
pub(crate) fn time_to_batch_major(batch: usize, len: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(batch * len);
    for b in 0..batch {
        for t in 0..len {
            idx.push(t * batch + b);
        }
    }
    idx
}

/// Rows `b * len + t` for every `b`, i.e. time step `t` of each sentence.
pub(crate) fn step_rows(batch: usize, len: usize, t: usize) -> Vec<usize> {
    (0..batch).map(|b| b * len + t).collect()
}
