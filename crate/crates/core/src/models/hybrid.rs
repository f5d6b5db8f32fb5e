//! Transformer whose selected lower encoder layers replace self-attention
//! with BiGRU + RGSE.
//!
//! An RGSE layer runs a BiGRU with `d_model/2` units per direction, a
//! bidirectional RGSE over its states, the residual combiner, and a learned
//! `2·d_model → d_model` projection added back to the layer input. The FFN
//! sublayer and both layer norms are kept, so every layer maps
//! `L × d_model` to `L × d_model`.

use alloc::format;
use alloc::vec::Vec;

use crate::config::{ExperimentConfig, LayerRange};
use crate::encoders::attention::{causal_mask, ffn_residual};
use crate::encoders::embedding::{BOS, EOS};
use crate::encoders::{positional_encoding, AttentionBlock, BiGru, EmbeddingTable, FeedForward, LayerNorm, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::params::ParamStore;
use crate::rgse::{RgseConfig, RgseLayer};
use crate::tape::{Tape, Var};

use super::{argmax, batch_shape, teacher_forcing, Example};

#[derive(Debug, Clone, PartialEq)]
pub struct RgseBlock {
    prefix: alloc::string::String,
    pub bigru: BiGru,
    pub rgse: RgseLayer,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl RgseBlock {
    pub fn register(store: &mut ParamStore, prefix: &str, config: &ExperimentConfig) -> Result<Self> {
        let d = config.d_model;
        let bigru = BiGru::register(store, &format!("{prefix}.bigru"), d, d / 2)?;
        let rgse = RgseLayer::register(store, &format!("{prefix}.rgse"), RgseConfig::new(config.variant, config.phi, config.tau, d))?;
        store.matrix(&format!("{prefix}.proj.w"), 2 * d, d)?;
        store.bias(&format!("{prefix}.proj.b"), d)?;
        Ok(RgseBlock {
            prefix: prefix.into(),
            bigru,
            rgse,
            norm1: LayerNorm::register(store, &format!("{prefix}.ln1"), d)?,
            ffn: FeedForward::register(store, &format!("{prefix}.ffn"), d, config.ffn_dim)?,
            norm2: LayerNorm::register(store, &format!("{prefix}.ln2"), d)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, graphs: &[&DepGraph]) -> Result<Var> {
        let batch = graphs.len();
        let len = tape.rows(x) / batch.max(1);
        let h = self.bigru.encode(tape, store, x, batch, len)?;
        let eta = self.rgse.forward(tape, store, h, graphs)?.eta;
        let w = tape.param(store, &format!("{}.proj.w", self.prefix))?;
        let b = tape.param(store, &format!("{}.proj.b", self.prefix))?;
        let p = tape.affine(eta, w, b)?;
        let r = tape.add(x, p)?;
        let y = self.norm1.forward(tape, store, r)?;
        ffn_residual(&self.ffn, &self.norm2, tape, store, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderLayer {
    Attention(AttentionBlock),
    Rgse(RgseBlock),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    fn register(store: &mut ParamStore, prefix: &str, d: usize, heads: usize, ffn_dim: usize) -> Result<Self> {
        Ok(DecoderLayer {
            self_attention: MultiHeadAttention::register(store, &format!("{prefix}.self"), d, heads)?,
            norm1: LayerNorm::register(store, &format!("{prefix}.ln1"), d)?,
            cross_attention: MultiHeadAttention::register(store, &format!("{prefix}.cross"), d, heads)?,
            norm2: LayerNorm::register(store, &format!("{prefix}.ln2"), d)?,
            ffn: FeedForward::register(store, &format!("{prefix}.ffn"), d, ffn_dim)?,
            norm3: LayerNorm::register(store, &format!("{prefix}.ln3"), d)?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, y: Var, memory: Var, batch: usize, causal: &[bool]) -> Result<Var> {
        let (a, _) = self.self_attention.forward(tape, store, y, y, batch, Some(causal))?;
        let r = tape.add(y, a)?;
        let y = self.norm1.forward(tape, store, r)?;
        let (c, _) = self.cross_attention.forward(tape, store, y, memory, batch, None)?;
        let r = tape.add(y, c)?;
        let y = self.norm2.forward(tape, store, r)?;
        ffn_residual(&self.ffn, &self.norm3, tape, store, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridTransformer {
    d_model: usize,
    rgse_layers: LayerRange,
    src_emb: EmbeddingTable,
    tgt_emb: EmbeddingTable,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    tgt_vocab: usize,
}

/// `√d · E x_t + PE_t` for rows `b * len + t`.
pub fn scaled_embedding(tape: &mut Tape, store: &ParamStore, emb: &EmbeddingTable, ids: &[usize], len: usize) -> Result<Var> {
    let d = emb.dim();
    let e = emb.lookup(tape, store, ids)?;
    let e = tape.scale(e, libm::sqrt(d as f64));
    let mut pe = Vec::with_capacity(ids.len() * d);
    for r in 0..ids.len() {
        pe.extend(positional_encoding(r % len, d)?);
    }
    let pe = tape.constant(ids.len(), d, pe)?;
    tape.add(e, pe)
}

impl HybridTransformer {
    pub fn register(store: &mut ParamStore, config: &ExperimentConfig, src_vocab: usize, tgt_vocab: usize) -> Result<Self> {
        let (d, n) = (config.d_model, config.layers);
        if let Some((_, last)) = config.rgse_layers.bounds() {
            if last > n {
                return Err(Error::config(
                    "rgse.layers",
                    format!("{} exceeds the {n} encoder layers", config.rgse_layers),
                ));
            }
        }
        if d % 2 != 0 {
            return Err(Error::config("model.d_model", format!("must be even, got {d}")));
        }
        let src_emb = EmbeddingTable::register(store, "src.emb", src_vocab, d)?;
        let tgt_emb = if config.share_embeddings {
            if src_vocab != tgt_vocab {
                return Err(Error::config(
                    "model.share_embeddings",
                    format!("needs one joint vocabulary, got {src_vocab} source and {tgt_vocab} target entries"),
                ));
            }
            src_emb.clone()
        } else {
            EmbeddingTable::register(store, "tgt.emb", tgt_vocab, d)?
        };
        let mut encoder = Vec::with_capacity(n);
        for i in 1..=n {
            let prefix = format!("enc.layer{i}");
            encoder.push(if config.rgse_layers.contains(i) {
                EncoderLayer::Rgse(RgseBlock::register(store, &prefix, config)?)
            } else {
                EncoderLayer::Attention(AttentionBlock::register(store, &prefix, d, config.heads, config.ffn_dim)?)
            });
        }
        let mut decoder = Vec::with_capacity(n);
        for i in 1..=n {
            decoder.push(DecoderLayer::register(store, &format!("dec.layer{i}"), d, config.heads, config.ffn_dim)?);
        }
        store.matrix("dec.out.w", d, tgt_vocab)?;
        store.bias("dec.out.b", tgt_vocab)?;
        Ok(HybridTransformer {
            d_model: d,
            rgse_layers: config.rgse_layers,
            src_emb,
            tgt_emb,
            encoder,
            decoder,
            tgt_vocab,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn rgse_layers(&self) -> LayerRange {
        self.rgse_layers
    }

    pub fn encoder_layers(&self) -> &[EncoderLayer] {
        &self.encoder
    }

    /// Output of every encoder layer (index 0 is the embedding input).
    pub fn encode_layers(&self, tape: &mut Tape, store: &ParamStore, graphs: &[&DepGraph], src: &[usize]) -> Result<Vec<Var>> {
        let (batch, len) = batch_shape(graphs, src)?;
        let mut x = scaled_embedding(tape, store, &self.src_emb, src, len)?;
        let mut outs = Vec::with_capacity(self.encoder.len() + 1);
        outs.push(x);
        for layer in &self.encoder {
            x = match layer {
                EncoderLayer::Attention(block) => block.forward(tape, store, x, batch, None)?,
                EncoderLayer::Rgse(block) => block.forward(tape, store, x, graphs)?,
            };
            outs.push(x);
        }
        Ok(outs)
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, graphs: &[&DepGraph], src: &[usize]) -> Result<Var> {
        Ok(*self.encode_layers(tape, store, graphs, src)?.last().expect("embedding output is always present"))
    }

    /// Logits for target prefixes `inputs` (rows `b * steps + t`).
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, memory: Var, inputs: &[usize], batch: usize, steps: usize) -> Result<Var> {
        let mut y = scaled_embedding(tape, store, &self.tgt_emb, inputs, steps)?;
        let causal = causal_mask(batch, steps);
        for layer in &self.decoder {
            y = layer.forward(tape, store, y, memory, batch, &causal)?;
        }
        let w = tape.param(store, "dec.out.w")?;
        let b = tape.param(store, "dec.out.b")?;
        tape.affine(y, w, b)
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&Example]) -> Result<Var> {
        let graphs: Vec<&DepGraph> = batch.iter().map(|e| &e.graph).collect();
        let src: Vec<usize> = batch.iter().flat_map(|e| e.src.iter().copied()).collect();
        let memory = self.encode(tape, store, &graphs, &src)?;
        let tf = teacher_forcing(batch);
        let logits = self.decode(tape, store, memory, &tf.inputs, batch.len(), tf.steps)?;
        tape.cross_entropy(logits, &tf.targets)
    }

    pub fn greedy_decode(&self, store: &ParamStore, graph: &DepGraph, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let memory = self.encode(&mut tape, store, &[graph], src)?;
        let mut prefix = alloc::vec![BOS];
        while prefix.len() <= max_len {
            let logits = self.decode(&mut tape, store, memory, &prefix, 1, prefix.len())?;
            let last = tape.row(logits, prefix.len() - 1);
            let next = argmax(last);
            if next == EOS {
                break;
            }
            prefix.push(next);
        }
        Ok(prefix[1..].to_vec())
    }

    pub fn target_vocab(&self) -> usize {
        self.tgt_vocab
    }
}
