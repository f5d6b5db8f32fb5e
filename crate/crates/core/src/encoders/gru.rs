//! GRU cell and bidirectional GRU encoder.
//!
//! The cell follows the gating used throughout this crate:
//!
//! ```text
//! z  = σ(s·Wz + x·Uz + bz)
//! r  = σ(s·Wr + x·Ur + br)
//! s' = tanh(x·Wh + (r ⊙ s)·Uh)
//! s⁺ = z ⊙ s + (1 - z) ⊙ s'
//! ```
//!
//! Row-vector convention: inputs are rows, weights are `in × out`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{step_rows, time_to_batch_major};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruCell {
    prefix: String,
    input_dim: usize,
    state_dim: usize,
}

/// Input-side projections for every row of a sequence batch.
#[derive(Debug, Clone, Copy)]
pub struct GruInputs {
    pub update: Var,
    pub reset: Var,
    pub candidate: Var,
}

impl GruCell {
    pub fn register(store: &mut ParamStore, prefix: &str, input_dim: usize, state_dim: usize) -> Result<Self> {
        let cell = GruCell {
            prefix: String::from(prefix),
            input_dim,
            state_dim,
        };
        store.matrix(&cell.name("z_state"), state_dim, state_dim)?;
        store.matrix(&cell.name("z_input"), input_dim, state_dim)?;
        store.bias(&cell.name("z_bias"), state_dim)?;
        store.matrix(&cell.name("r_state"), state_dim, state_dim)?;
        store.matrix(&cell.name("r_input"), input_dim, state_dim)?;
        store.bias(&cell.name("r_bias"), state_dim)?;
        store.matrix(&cell.name("cand_input"), input_dim, state_dim)?;
        store.matrix(&cell.name("cand_state"), state_dim, state_dim)?;
        Ok(cell)
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn param_names(&self) -> [String; 8] {
        [
            "z_state",
            "z_input",
            "z_bias",
            "r_state",
            "r_input",
            "r_bias",
            "cand_input",
            "cand_state",
        ]
        .map(|p| self.name(p))
    }

    /// Project all input rows at once (biases folded into the gate terms).
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<GruInputs> {
        if tape.cols(x) != self.input_dim {
            return Err(Error::dim("gru input", &[self.input_dim], &[tape.rows(x), tape.cols(x)]));
        }
        let uz = tape.param(store, &self.name("z_input"))?;
        let bz = tape.param(store, &self.name("z_bias"))?;
        let ur = tape.param(store, &self.name("r_input"))?;
        let br = tape.param(store, &self.name("r_bias"))?;
        let wh = tape.param(store, &self.name("cand_input"))?;
        Ok(GruInputs {
            update: tape.affine(x, uz, bz)?,
            reset: tape.affine(x, ur, br)?,
            candidate: tape.matmul(x, wh)?,
        })
    }

    /// One recurrence step from pre-projected inputs for this step.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, prev: Var, inputs: GruInputs) -> Result<Var> {
        let wz = tape.param(store, &self.name("z_state"))?;
        let wr = tape.param(store, &self.name("r_state"))?;
        let uh = tape.param(store, &self.name("cand_state"))?;
        let zs = tape.matmul(prev, wz)?;
        let zs = tape.add(zs, inputs.update)?;
        let z = tape.sigmoid(zs);
        let rs = tape.matmul(prev, wr)?;
        let rs = tape.add(rs, inputs.reset)?;
        let r = tape.sigmoid(rs);
        let gated = tape.mul(r, prev)?;
        let hs = tape.matmul(gated, uh)?;
        let hs = tape.add(inputs.candidate, hs)?;
        let cand = tape.tanh(hs);
        let keep = tape.mul(z, prev)?;
        let nz = tape.one_minus(z);
        let new = tape.mul(nz, cand)?;
        tape.add(keep, new)
    }

    /// Run over `batch` sequences of length `len` (rows `b * len + t`),
    /// right-to-left when `reverse`, from a zero state. Output rows use the
    /// same layout as the input.
    pub fn scan(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch: usize, len: usize, reverse: bool) -> Result<Var> {
        if tape.rows(x) != batch * len || len == 0 {
            return Err(Error::dim("gru scan", &[batch, len], &[tape.rows(x), tape.cols(x)]));
        }
        let proj = self.project(tape, store, x)?;
        let mut state = tape.zeros(batch, self.state_dim);
        let mut states: Vec<Var> = Vec::with_capacity(len);
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for &t in &order {
            let rows = step_rows(batch, len, t);
            let inputs = GruInputs {
                update: tape.gather_rows(proj.update, &rows)?,
                reset: tape.gather_rows(proj.reset, &rows)?,
                candidate: tape.gather_rows(proj.candidate, &rows)?,
            };
            state = self.step(tape, store, state, inputs)?;
            states.push(state);
        }
        if reverse {
            states.reverse();
        }
        let stacked = tape.concat_rows(&states)?;
        tape.gather_rows(stacked, &time_to_batch_major(batch, len))
    }
}

/// Forward and backward GRU over the same inputs; output `[h→ ; h←]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn register(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        Ok(BiGru {
            forward: GruCell::register(store, &format!("{prefix}.fwd"), input_dim, hidden_dim)?,
            backward: GruCell::register(store, &format!("{prefix}.bwd"), input_dim, hidden_dim)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.state_dim + self.backward.state_dim
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch: usize, len: usize) -> Result<Var> {
        if len == 0 {
            return Err(Error::arg("cannot encode an empty sequence"));
        }
        let f = self.forward.scan(tape, store, x, batch, len, false)?;
        let b = self.backward.scan(tape, store, x, batch, len, true)?;
        tape.concat_cols(&[f, b])
    }
}
