//! Attentional recurrent translation model.
//!
//! The encoder is a BiGRU, optionally followed by an RGSE layer (memory is
//! `η`, width `4·d_hidden`) or a stack of syntactic GCN layers. The decoder
//! is a GRU over `[embedding; context]` with additive attention computed from
//! the previous decoder state, and logits read `[state; context]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;

use crate::config::{ExperimentConfig, RnmtEncoder};
use crate::encoders::embedding::{BOS, EOS};
use crate::encoders::{BiGru, EmbeddingTable, GcnLayer, GruCell};
use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::params::ParamStore;
use crate::rgse::{RgseConfig, RgseLayer};
use crate::tape::{Tape, Var};

use super::{argmax, batch_shape, teacher_forcing, Example};

#[derive(Debug, Clone, PartialEq)]
pub struct RnmtModel {
    encoder: RnmtEncoder,
    src_emb: EmbeddingTable,
    tgt_emb: EmbeddingTable,
    bigru: BiGru,
    rgse: Option<RgseLayer>,
    gcn: Vec<GcnLayer>,
    decoder: GruCell,
    memory_dim: usize,
    tgt_vocab: usize,
}

/// Encoder output prepared for attention.
#[derive(Debug, Clone, Copy)]
pub struct Memory {
    /// Rows `b * len + j`.
    pub values: Var,
    /// `values · U_a`, the step-independent half of the attention score.
    pub keys: Var,
    pub batch: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeStep {
    /// `batch × |V_tgt|`
    pub logits: Var,
    pub state: Var,
    /// `batch × len`, rows sum to one.
    pub attention: Var,
}

impl RnmtModel {
    pub fn register(
        store: &mut ParamStore,
        config: &ExperimentConfig,
        src_vocab: usize,
        tgt_vocab: usize,
        labels: &[String],
    ) -> Result<Self> {
        let (de, dh) = (config.d_emb, config.d_hidden);
        let src_emb = EmbeddingTable::register(store, "src.emb", src_vocab, de)?;
        let tgt_emb = if config.share_embeddings {
            if src_vocab != tgt_vocab {
                return Err(Error::config(
                    "model.share_embeddings",
                    format!("needs one joint vocabulary, got {src_vocab} source and {tgt_vocab} target entries"),
                ));
            }
            src_emb.clone()
        } else {
            EmbeddingTable::register(store, "tgt.emb", tgt_vocab, de)?
        };
        let bigru = BiGru::register(store, "enc.bigru", de, dh)?;
        let h_dim = bigru.output_dim();
        let mut rgse = None;
        let mut gcn = Vec::new();
        let memory_dim = match config.encoder {
            RnmtEncoder::BiGru => h_dim,
            RnmtEncoder::BiGruRgse => {
                let cfg = RgseConfig::new(config.variant, config.phi, config.tau, h_dim);
                let layer = RgseLayer::register(store, "enc.rgse", cfg)?;
                let d = cfg.output_dim();
                rgse = Some(layer);
                d
            }
            RnmtEncoder::BiGruGcn => {
                for i in 0..config.gcn_layers {
                    gcn.push(GcnLayer::register(store, &format!("enc.gcn{i}"), h_dim, labels, config.edge_dropout)?);
                }
                h_dim
            }
        };
        let dd = h_dim;
        let decoder = GruCell::register(store, "dec.gru", de + memory_dim, dd)?;
        store.matrix("dec.att.w", dd, dd)?;
        store.matrix("dec.att.u", memory_dim, dd)?;
        store.matrix("dec.att.v", dd, 1)?;
        store.matrix("dec.out.w", dd + memory_dim, tgt_vocab)?;
        store.bias("dec.out.b", tgt_vocab)?;
        Ok(RnmtModel {
            encoder: config.encoder,
            src_emb,
            tgt_emb,
            bigru,
            rgse,
            gcn,
            decoder,
            memory_dim,
            tgt_vocab,
        })
    }

    pub fn encoder_kind(&self) -> RnmtEncoder {
        self.encoder
    }

    pub fn rgse(&self) -> Option<&RgseLayer> {
        self.rgse.as_ref()
    }

    pub fn memory_dim(&self) -> usize {
        self.memory_dim
    }

    pub fn state_dim(&self) -> usize {
        self.decoder.state_dim()
    }

    /// BiGRU states `h̃` for equal-length sentences.
    pub fn base_states(&self, tape: &mut Tape, store: &ParamStore, graphs: &[&DepGraph], src: &[usize]) -> Result<Var> {
        let (batch, len) = batch_shape(graphs, src)?;
        let x = self.src_emb.lookup(tape, store, src)?;
        self.bigru.encode(tape, store, x, batch, len)
    }

    /// Encoder memory. `rng` switches graph layers to training mode.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graphs: &[&DepGraph],
        src: &[usize],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Memory> {
        let (batch, len) = batch_shape(graphs, src)?;
        let h = self.base_states(tape, store, graphs, src)?;
        let values = match (&self.rgse, self.gcn.is_empty()) {
            (Some(layer), _) => layer.forward(tape, store, h, graphs)?.eta,
            (None, false) => {
                let training = rng.is_some();
                let mut rng = rng;
                let mut x = h;
                for layer in &self.gcn {
                    x = layer.forward(tape, store, x, graphs, training, rng.as_deref_mut())?;
                }
                x
            }
            (None, true) => h,
        };
        let u = tape.param(store, "dec.att.u")?;
        let keys = tape.matmul(values, u)?;
        Ok(Memory {
            values,
            keys,
            batch,
            len,
        })
    }

    /// Zero initial decoder state for `batch` sentences.
    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Var {
        tape.zeros(batch, self.decoder.state_dim())
    }

    /// Attention weights `softmax_j(v · tanh(W_a s + U_a m_j))` from the
    /// previous state.
    fn attend(&self, tape: &mut Tape, store: &ParamStore, state: Var, memory: &Memory) -> Result<(Var, Var)> {
        let w = tape.param(store, "dec.att.w")?;
        let v = tape.param(store, "dec.att.v")?;
        let ws = tape.matmul(state, w)?;
        let spread: Vec<usize> = (0..memory.batch).flat_map(|b| core::iter::repeat_n(b, memory.len)).collect();
        let ws = tape.gather_rows(ws, &spread)?;
        let pre = tape.add(ws, memory.keys)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, v)?;
        let scores = tape.reshape(scores, memory.batch, memory.len)?;
        let att = tape.softmax_rows(scores, 1.0, None)?;
        let ctx = tape.batched_matmul(att, memory.values, memory.batch, false)?;
        Ok((att, ctx))
    }

    /// One decoder step for a batch; out-of-range token ids read `<unk>`.
    pub fn decode_step(&self, tape: &mut Tape, store: &ParamStore, prev: &[usize], state: Var, memory: &Memory) -> Result<DecodeStep> {
        if prev.len() != memory.batch || tape.rows(state) != memory.batch {
            return Err(Error::dim("decode step", &[memory.batch], &[prev.len(), tape.rows(state)]));
        }
        let (attention, ctx) = self.attend(tape, store, state, memory)?;
        let emb = self.tgt_emb.lookup(tape, store, prev)?;
        let x = tape.concat_cols(&[emb, ctx])?;
        let inputs = self.decoder.project(tape, store, x)?;
        let state = self.decoder.step(tape, store, state, inputs)?;
        let w = tape.param(store, "dec.out.w")?;
        let b = tape.param(store, "dec.out.b")?;
        let feat = tape.concat_cols(&[state, ctx])?;
        let logits = tape.affine(feat, w, b)?;
        Ok(DecodeStep {
            logits,
            state,
            attention,
        })
    }

    /// Teacher-forced mean token cross-entropy over a batch of equal source
    /// length.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&Example], rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let graphs: Vec<&DepGraph> = batch.iter().map(|e| &e.graph).collect();
        let src: Vec<usize> = batch.iter().flat_map(|e| e.src.iter().copied()).collect();
        let memory = self.encode(tape, store, &graphs, &src, rng)?;
        let tf = teacher_forcing(batch);
        let mut state = self.initial_state(tape, batch.len());
        let mut logits = Vec::with_capacity(tf.steps);
        let mut targets = Vec::with_capacity(tf.steps * batch.len());
        for t in 0..tf.steps {
            let prev: Vec<usize> = (0..batch.len()).map(|b| tf.inputs[b * tf.steps + t]).collect();
            let step = self.decode_step(tape, store, &prev, state, &memory)?;
            state = step.state;
            logits.push(step.logits);
            targets.extend((0..batch.len()).map(|b| tf.targets[b * tf.steps + t]));
        }
        let all = tape.concat_rows(&logits)?;
        tape.cross_entropy(all, &targets)
    }

    /// Argmax decoding until `</s>` or `max_len` tokens.
    pub fn greedy_decode(&self, store: &ParamStore, graph: &DepGraph, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let memory = self.encode(&mut tape, store, &[graph], src, None)?;
        let mut state = self.initial_state(&mut tape, 1);
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let step = self.decode_step(&mut tape, store, &[prev], state, &memory)?;
            let next = argmax(tape.value(step.logits));
            if next == EOS {
                break;
            }
            out.push(next);
            state = step.state;
            prev = next;
        }
        Ok(out)
    }

    pub fn target_vocab(&self) -> usize {
        self.tgt_vocab
    }
}
