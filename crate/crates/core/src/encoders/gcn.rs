//! Syntactic graph convolution with direction-specific weights and
//! label-specific biases:
//!
//! `h_v = ReLU( Σ_u W_dir(u,v) · h_u + b_lab(u,v) )`
//!
//! over dependents of `v` (`in`), the head of `v` (`out`) and `v` itself
//! (`self`). During training each non-self edge is dropped independently.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::params::ParamStore;
use crate::tape::{SparseRows, Tape, Var};

pub const SELF_LABEL: &str = "self";
pub const DEFAULT_LABEL: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    prefix: String,
    dim: usize,
    /// Bias row of each label; includes `self` and `default`.
    labels: BTreeMap<String, usize>,
    edge_dropout: f64,
}

impl GcnLayer {
    pub fn register<S: AsRef<str>>(store: &mut ParamStore, prefix: &str, dim: usize, labels: &[S], edge_dropout: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&edge_dropout) {
            return Err(Error::arg(format!("edge dropout must lie in [0, 1), got {edge_dropout}")));
        }
        let mut all: Vec<&str> = labels.iter().map(|s| s.as_ref()).collect();
        all.push(SELF_LABEL);
        all.push(DEFAULT_LABEL);
        all.sort_unstable();
        all.dedup();
        for dir in ["w_in", "w_out", "w_self"] {
            store.matrix(&format!("{prefix}.{dir}"), dim, dim)?;
        }
        let mut map = BTreeMap::new();
        for (i, l) in all.iter().enumerate() {
            store.bias(&format!("{prefix}.b_lab.{l}"), dim)?;
            map.insert(String::from(*l), i);
        }
        Ok(GcnLayer {
            prefix: String::from(prefix),
            dim,
            labels: map,
            edge_dropout,
        })
    }

    pub fn edge_dropout(&self) -> f64 {
        self.edge_dropout
    }

    fn label_index(&self, label: &str) -> usize {
        match self.labels.get(label) {
            Some(&i) => i,
            None => {
                log::warn!("gcn: no bias registered for label `{label}`, using `{DEFAULT_LABEL}`");
                self.labels[DEFAULT_LABEL]
            }
        }
    }

    /// `h` holds `graphs.len()` sentences of equal length, rows `b * len + t`.
    /// Training mode needs `rng` when the dropout rate is positive.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        graphs: &[&DepGraph],
        training: bool,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        self.forward_with_rate(tape, store, h, graphs, if training { self.edge_dropout } else { 0.0 }, rng)
    }

    /// Like [`GcnLayer::forward`] with an explicit drop probability in `[0, 1]`.
    pub fn forward_with_rate<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        graphs: &[&DepGraph],
        drop_rate: f64,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let batch = graphs.len();
        let len = graphs.first().map_or(0, |g| g.len());
        if graphs.iter().any(|g| g.len() != len) || tape.rows(h) != batch * len || tape.cols(h) != self.dim {
            return Err(Error::dim("gcn input", &[batch, len, self.dim], &[tape.rows(h), tape.cols(h)]));
        }
        if drop_rate > 0.0 && drop_rate < 1.0 && rng.is_none() {
            return Err(Error::arg("edge dropout needs a random source"));
        }
        let nlab = self.labels.len();
        let mut mix_in: SparseRows = vec![Vec::new(); batch * len];
        let mut mix_out: SparseRows = vec![Vec::new(); batch * len];
        let mut counts = vec![0.0; batch * len * nlab];
        let self_idx = self.labels[SELF_LABEL];
        for (b, g) in graphs.iter().enumerate() {
            let base = b * len;
            for t in 0..len {
                counts[(base + t) * nlab + self_idx] += 1.0;
            }
            for e in g.edges() {
                for (node, src, mix) in [(e.head, e.dependent, &mut mix_in), (e.dependent, e.head, &mut mix_out)] {
                    let dropped = if drop_rate >= 1.0 {
                        true
                    } else if drop_rate > 0.0 {
                        rng.as_deref_mut().expect("checked above").random::<f64>() < drop_rate
                    } else {
                        false
                    };
                    if dropped {
                        continue;
                    }
                    mix[base + node].push((base + src, 1.0));
                    counts[(base + node) * nlab + self.label_index(&e.label)] += 1.0;
                }
            }
        }
        let p = &self.prefix;
        let w_in = tape.param(store, &format!("{p}.w_in"))?;
        let w_out = tape.param(store, &format!("{p}.w_out"))?;
        let w_self = tape.param(store, &format!("{p}.w_self"))?;
        let mut bias_rows = Vec::with_capacity(nlab);
        for l in self.labels.keys() {
            bias_rows.push(tape.param(store, &format!("{p}.b_lab.{l}"))?);
        }
        let biases = tape.concat_rows(&bias_rows)?;

        let hin = tape.matmul(h, w_in)?;
        let hin = tape.row_mix(hin, mix_in)?;
        let hout = tape.matmul(h, w_out)?;
        let hout = tape.row_mix(hout, mix_out)?;
        let hself = tape.matmul(h, w_self)?;
        let c = tape.constant(batch * len, nlab, counts)?;
        let bsum = tape.matmul(c, biases)?;
        let pre = tape.add(hin, hout)?;
        let pre = tape.add(pre, hself)?;
        let pre = tape.add(pre, bsum)?;
        Ok(tape.relu(pre))
    }
}
