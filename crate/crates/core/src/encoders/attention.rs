//! Scaled dot-product attention block with sinusoidal positions (post-norm).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Sinusoidal position code: `sin(t / 10000^(2j/d))` at `2j`, `cos` at `2j+1`.
pub fn positional_encoding(t: usize, d: usize) -> Result<Vec<f64>> {
    if !d.is_multiple_of(2) {
        return Err(Error::arg(format!("positional encoding width must be even, got {d}")));
    }
    let mut pe = vec![0.0; d];
    for j in 0..d / 2 {
        let angle = t as f64 / libm::pow(10000.0, (2 * j) as f64 / d as f64);
        pe[2 * j] = libm::sin(angle);
        pe[2 * j + 1] = libm::cos(angle);
    }
    Ok(pe)
}

pub(crate) const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNorm {
    prefix: String,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        store.ones(&format!("{prefix}.gain"), dim)?;
        store.bias(&format!("{prefix}.bias"), dim)?;
        Ok(LayerNorm {
            prefix: String::from(prefix),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, &format!("{}.gain", self.prefix))?;
        let b = tape.param(store, &format!("{}.bias", self.prefix))?;
        let n = tape.layer_norm_rows(x, LN_EPS);
        let n = tape.mul_row(n, g)?;
        tape.add_row(n, b)
    }
}

/// Two affine maps with a rectifier between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForward {
    prefix: String,
}

impl FeedForward {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize) -> Result<Self> {
        store.matrix(&format!("{prefix}.w1"), dim, hidden)?;
        store.bias(&format!("{prefix}.b1"), hidden)?;
        store.matrix(&format!("{prefix}.w2"), hidden, dim)?;
        store.bias(&format!("{prefix}.b2"), dim)?;
        Ok(FeedForward {
            prefix: String::from(prefix),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let p = &self.prefix;
        let w1 = tape.param(store, &format!("{p}.w1"))?;
        let b1 = tape.param(store, &format!("{p}.b1"))?;
        let w2 = tape.param(store, &format!("{p}.w2"))?;
        let b2 = tape.param(store, &format!("{p}.b2"))?;
        let h = tape.affine(x, w1, b1)?;
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadAttention {
    prefix: String,
    dim: usize,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::arg(format!("width {dim} is not divisible by {heads} heads")));
        }
        for m in ["q", "k", "v", "o"] {
            store.matrix(&format!("{prefix}.{m}"), dim, dim)?;
        }
        store.bias(&format!("{prefix}.o_bias"), dim)?;
        Ok(MultiHeadAttention {
            prefix: String::from(prefix),
            dim,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Attend from `queries` (rows `b * lq + i`) over `memory` (rows
    /// `b * lk + j`). `mask`, when given, has `batch * lq × lk` entries with
    /// `false` marking keys a query may not see. Returns the projected output
    /// and the attention weights of each head.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        memory: Var,
        batch: usize,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        if tape.cols(queries) != self.dim || tape.cols(memory) != self.dim {
            return Err(Error::dim(
                "attention width",
                &[tape.cols(queries), tape.cols(memory)],
                &[self.dim],
            ));
        }
        let p = &self.prefix;
        let wq = tape.param(store, &format!("{p}.q"))?;
        let wk = tape.param(store, &format!("{p}.k"))?;
        let wv = tape.param(store, &format!("{p}.v"))?;
        let wo = tape.param(store, &format!("{p}.o"))?;
        let bo = tape.param(store, &format!("{p}.o_bias"))?;
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(memory, wk)?;
        let v = tape.matmul(memory, wv)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.batched_matmul(qh, kh, batch, true)?;
            let att = tape.softmax_rows(scores, scale, mask)?;
            outs.push(tape.batched_matmul(att, vh, batch, false)?);
            weights.push(att);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        Ok((tape.affine(cat, wo, bo)?, weights))
    }
}

/// Expand a per-key padding mask (`batch * len`, `true` = real token) to the
/// `batch * len × len` layout used by [`MultiHeadAttention::forward`].
pub fn key_mask(keys: &[bool], batch: usize, len: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(batch * len * len);
    for b in 0..batch {
        for _ in 0..len {
            m.extend_from_slice(&keys[b * len..(b + 1) * len]);
        }
    }
    m
}

/// Lower-triangular mask for decoder self-attention.
pub fn causal_mask(batch: usize, len: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(batch * len * len);
    for _ in 0..batch {
        for i in 0..len {
            m.extend((0..len).map(|j| j <= i));
        }
    }
    m
}

/// Self-attention sublayer and feed-forward sublayer, each followed by a
/// residual connection and layer norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl AttentionBlock {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, ffn_dim: usize) -> Result<Self> {
        Ok(AttentionBlock {
            attention: MultiHeadAttention::register(store, &format!("{prefix}.att"), dim, heads)?,
            norm1: LayerNorm::register(store, &format!("{prefix}.ln1"), dim)?,
            ffn: FeedForward::register(store, &format!("{prefix}.ffn"), dim, ffn_dim)?,
            norm2: LayerNorm::register(store, &format!("{prefix}.ln2"), dim)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch: usize, mask: Option<&[bool]>) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, x, batch, mask)?.0)
    }

    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        batch: usize,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let (a, w) = self.attention.forward(tape, store, x, x, batch, mask)?;
        let r = tape.add(x, a)?;
        let y = self.norm1.forward(tape, store, r)?;
        Ok((self.ffn_sublayer(tape, store, y)?, w))
    }

    /// `LN(y + FFN(y))`
    pub fn ffn_sublayer(&self, tape: &mut Tape, store: &ParamStore, y: Var) -> Result<Var> {
        ffn_residual(&self.ffn, &self.norm2, tape, store, y)
    }
}

pub(crate) fn ffn_residual(ffn: &FeedForward, norm: &LayerNorm, tape: &mut Tape, store: &ParamStore, y: Var) -> Result<Var> {
    let f = ffn.forward(tape, store, y)?;
    let r = tape.add(y, f)?;
    norm.forward(tape, store, r)
}
