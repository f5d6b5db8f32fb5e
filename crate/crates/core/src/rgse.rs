//! Recurrent graph syntax encoder.
//!
//! Each token is a GRU node. Node `j` reads two things: the previous node's
//! state (word order) and an integration `φ_j` of the base-encoder states on
//! its incoming dependency edges (syntax). Forward and backward scans run with
//! disjoint parameters, and a residual combiner `τ` merges both scans with the
//! base-encoder state into the final per-position output `η`.
//!
//! Which edges a node may read depends on the variant: `bi_past` keeps edges
//! whose source precedes the node in the scan direction, `bi_future` the
//! ones that follow it, `bi_total` all of them. The self edge is always read.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encoders::gru::GruCell;
use crate::error::{Error, Result};
use crate::graph::{DepGraph, EdgeFilter, EdgeRef, Traversal};
use crate::params::ParamStore;
use crate::tape::{SparseRows, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Forward,
    BiTotal,
    BiPast,
    BiFuture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhiMode {
    Sum,
    Average,
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TauMode {
    Normal,
    Gated,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Forward, Variant::BiTotal, Variant::BiPast, Variant::BiFuture];

    pub fn filter(self) -> EdgeFilter {
        match self {
            Variant::Forward | Variant::BiTotal => EdgeFilter::Total,
            Variant::BiPast => EdgeFilter::PastOnly,
            Variant::BiFuture => EdgeFilter::FutureOnly,
        }
    }

    pub fn is_bidirectional(self) -> bool {
        self != Variant::Forward
    }
}

impl PhiMode {
    pub const ALL: [PhiMode; 3] = [PhiMode::Sum, PhiMode::Average, PhiMode::Gated];
}

impl TauMode {
    pub const ALL: [TauMode; 2] = [TauMode::Normal, TauMode::Gated];
}

macro_rules! string_enum {
    ($ty:ty, $what:literal, $($variant:path => $s:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($variant),)+
                    other => Err(Error::arg(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

string_enum!(Variant, "variant",
    Variant::Forward => "forward",
    Variant::BiTotal => "bi_total",
    Variant::BiPast => "bi_past",
    Variant::BiFuture => "bi_future",
);
string_enum!(PhiMode, "integration mode",
    PhiMode::Sum => "sum",
    PhiMode::Average => "average",
    PhiMode::Gated => "gated",
);
string_enum!(TauMode, "residual mode",
    TauMode::Normal => "normal",
    TauMode::Gated => "gated",
);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RgseConfig {
    pub variant: Variant,
    pub phi: PhiMode,
    pub tau: TauMode,
    pub input_dim: usize,
    pub state_dim: usize,
}

impl RgseConfig {
    pub fn new(variant: Variant, phi: PhiMode, tau: TauMode, dim: usize) -> Self {
        RgseConfig {
            variant,
            phi,
            tau,
            input_dim: dim,
            state_dim: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::arg("RGSE input width must be positive"));
        }
        // both residual combiners add or blend s with h̃
        if self.state_dim != self.input_dim {
            return Err(Error::dim("rgse residual", &[self.state_dim], &[self.input_dim]));
        }
        Ok(())
    }

    /// Width of `η`.
    pub fn output_dim(&self) -> usize {
        2 * self.state_dim
    }
}

/// Per-position outputs of one layer application. Rows follow the input
/// layout (`b * len + t`).
#[derive(Debug, Clone, Copy)]
pub struct RgseOutput {
    pub s_forward: Var,
    pub s_backward: Var,
    pub eta: Var,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgseLayer {
    prefix: String,
    config: RgseConfig,
    forward: GruCell,
    backward: Option<GruCell>,
}

/// Sparse integration weights for one scan: row `b * len + j` mixes the
/// source rows of `E_in(s_j)`.
pub fn integration_weights(graphs: &[&DepGraph], traversal: Traversal, filter: EdgeFilter, mode: PhiMode) -> Result<SparseRows> {
    let len = graphs.first().map_or(0, |g| g.len());
    let mut mix = Vec::with_capacity(graphs.len() * len);
    for (b, g) in graphs.iter().enumerate() {
        if g.len() != len {
            return Err(Error::dim("rgse batch", &[len], &[g.len()]));
        }
        for j in 0..len {
            let edges = g.incoming_edges(j, traversal, filter)?;
            mix.push(edge_weights(&edges, mode, b * len)?);
        }
    }
    Ok(mix)
}

fn edge_weights(edges: &[EdgeRef], mode: PhiMode, base: usize) -> Result<Vec<(usize, f64)>> {
    if edges.is_empty() {
        return Err(Error::Contract(String::from("node has no incoming edge (self edge missing)")));
    }
    let w = match mode {
        PhiMode::Average => 1.0 / edges.len() as f64,
        PhiMode::Sum | PhiMode::Gated => 1.0,
    };
    Ok(edges.iter().map(|e| (base + e.source_position, w)).collect())
}

/// Apply `φ` given precomputed weights. Gated mode scales each source state
/// by `σ(h·W + b)` before summation.
fn integrate_rows(tape: &mut Tape, h: Var, gate: Option<(Var, Var)>, mix: SparseRows) -> Result<Var> {
    let src = match gate {
        Some((w, b)) => {
            let pre = tape.affine(h, w, b)?;
            let g = tape.sigmoid(pre);
            tape.mul(g, h)?
        }
        None => h,
    };
    tape.row_mix(src, mix)
}

/// `φ` over an explicit edge list: sum, mean, or sigmoid-gated sum of the
/// source states. `gate` holds the `d×d` matrix and `d` bias used by the
/// gated mode.
pub fn integrate(mode: PhiMode, gate: Option<(&[f64], &[f64])>, edges: &[EdgeRef], states: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = states.first().map_or(0, Vec::len);
    let mix = vec![edge_weights(edges, mode, 0)?];
    if let Some(e) = edges.iter().find(|e| e.source_position >= states.len()) {
        return Err(Error::arg(format!("edge source {} has no state", e.source_position)));
    }
    let mut tape = Tape::new();
    let h = tape.constant(states.len(), d, states.concat())?;
    let gate = match (mode, gate) {
        (PhiMode::Gated, Some((w, b))) => Some((tape.constant(d, d, w.to_vec())?, tape.constant(1, d, b.to_vec())?)),
        (PhiMode::Gated, None) => return Err(Error::arg("gated integration needs gate parameters")),
        _ => None,
    };
    let out = integrate_rows(&mut tape, h, gate, mix)?;
    Ok(tape.value(out).to_vec())
}

impl RgseLayer {
    pub fn register(store: &mut ParamStore, prefix: &str, config: RgseConfig) -> Result<Self> {
        config.validate()?;
        let (d, ds) = (config.input_dim, config.state_dim);
        if config.phi == PhiMode::Gated {
            store.matrix(&format!("{prefix}.phi.gate_w"), d, d)?;
            store.bias(&format!("{prefix}.phi.gate_b"), d)?;
        }
        let forward = GruCell::register(store, &format!("{prefix}.fwd"), d, ds)?;
        let backward = if config.variant.is_bidirectional() {
            Some(GruCell::register(store, &format!("{prefix}.bwd"), d, ds)?)
        } else {
            None
        };
        if config.tau == TauMode::Gated {
            for dir in ["fwd", "bwd"] {
                store.gate_vector(&format!("{prefix}.tau.{dir}.omega"), ds, ds)?;
                store.gate_vector(&format!("{prefix}.tau.{dir}.psi"), d, d)?;
            }
        }
        Ok(RgseLayer {
            prefix: String::from(prefix),
            config,
            forward,
            backward,
        })
    }

    pub fn config(&self) -> &RgseConfig {
        &self.config
    }

    pub fn forward_cell(&self) -> &GruCell {
        &self.forward
    }

    pub fn backward_cell(&self) -> Option<&GruCell> {
        self.backward.as_ref()
    }

    fn gate(&self, tape: &mut Tape, store: &ParamStore) -> Result<Option<(Var, Var)>> {
        if self.config.phi != PhiMode::Gated {
            return Ok(None);
        }
        Ok(Some((
            tape.param(store, &format!("{}.phi.gate_w", self.prefix))?,
            tape.param(store, &format!("{}.phi.gate_b", self.prefix))?,
        )))
    }

    /// Integrated inputs `φ` for both scan directions.
    pub fn integrate_batch(&self, tape: &mut Tape, store: &ParamStore, h: Var, graphs: &[&DepGraph]) -> Result<(Var, Var)> {
        let gate = self.gate(tape, store)?;
        let filter = self.config.variant.filter();
        let fwd_mix = integration_weights(graphs, Traversal::Forward, filter, self.config.phi)?;
        let phi_f = integrate_rows(tape, h, gate, fwd_mix)?;
        // total filtering reads the same edge set in both directions
        let phi_b = if filter == EdgeFilter::Total {
            phi_f
        } else {
            let bwd_mix = integration_weights(graphs, Traversal::Backward, filter, self.config.phi)?;
            integrate_rows(tape, h, gate, bwd_mix)?
        };
        Ok((phi_f, phi_b))
    }

    /// Forward and backward state sequences; the backward half is zero for
    /// the forward-only variant. Boundary states are zero.
    pub fn propagate(&self, tape: &mut Tape, store: &ParamStore, h: Var, graphs: &[&DepGraph]) -> Result<(Var, Var)> {
        let batch = graphs.len();
        let len = graphs.first().map_or(0, |g| g.len());
        if batch == 0 || len == 0 {
            return Err(Error::arg("RGSE needs at least one non-empty sentence"));
        }
        if tape.rows(h) != batch * len || tape.cols(h) != self.config.input_dim {
            return Err(Error::dim(
                "rgse input",
                &[batch * len, self.config.input_dim],
                &[tape.rows(h), tape.cols(h)],
            ));
        }
        let (phi_f, phi_b) = self.integrate_batch(tape, store, h, graphs)?;
        let s_f = self.forward.scan(tape, store, phi_f, batch, len, false)?;
        let s_b = match &self.backward {
            Some(cell) => cell.scan(tape, store, phi_b, batch, len, true)?,
            None => tape.zeros(batch * len, self.config.state_dim),
        };
        Ok((s_f, s_b))
    }

    /// Residual combination `τ(s→, s←, h̃)`.
    pub fn combine(&self, tape: &mut Tape, store: &ParamStore, s_f: Var, s_b: Var, h: Var) -> Result<Var> {
        if tape.dims(s_f) != tape.dims(h) || tape.dims(s_b) != tape.dims(h) {
            let (a, b) = tape.dims(s_f);
            let (c, d) = tape.dims(h);
            return Err(Error::dim("rgse combine", &[a, b], &[c, d]));
        }
        match self.config.tau {
            TauMode::Normal => {
                let a = tape.add(s_f, h)?;
                let b = tape.add(s_b, h)?;
                tape.concat_cols(&[a, b])
            }
            TauMode::Gated => {
                let a = self.gated_blend(tape, store, "fwd", s_f, h)?;
                let b = self.gated_blend(tape, store, "bwd", s_b, h)?;
                tape.concat_cols(&[a, b])
            }
        }
    }

    /// `λ ⊙ s + (1 - λ) ⊙ h̃` with `λ = σ(ω ⊙ s + ψ ⊙ h̃)`.
    fn gated_blend(&self, tape: &mut Tape, store: &ParamStore, dir: &str, s: Var, h: Var) -> Result<Var> {
        let omega = tape.param(store, &format!("{}.tau.{dir}.omega", self.prefix))?;
        let psi = tape.param(store, &format!("{}.tau.{dir}.psi", self.prefix))?;
        let a = tape.mul_row(s, omega)?;
        let b = tape.mul_row(h, psi)?;
        let pre = tape.add(a, b)?;
        let lambda = tape.sigmoid(pre);
        let ls = tape.mul(lambda, s)?;
        let nl = tape.one_minus(lambda);
        let lh = tape.mul(nl, h)?;
        tape.add(ls, lh)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, graphs: &[&DepGraph]) -> Result<RgseOutput> {
        let (s_forward, s_backward) = self.propagate(tape, store, h, graphs)?;
        let eta = self.combine(tape, store, s_forward, s_backward, h)?;
        Ok(RgseOutput {
            s_forward,
            s_backward,
            eta,
        })
    }

    /// Value-level application to one sentence: returns `(s→, s←, η)`, one
    /// row per token.
    pub fn apply(&self, store: &ParamStore, h_tilde: &[Vec<f64>], graph: &DepGraph) -> Result<RgseValues> {
        if h_tilde.len() != graph.len() {
            return Err(Error::dim("rgse input length", &[graph.len()], &[h_tilde.len()]));
        }
        let mut tape = Tape::new();
        let d = h_tilde.first().map_or(0, Vec::len);
        let h = tape.constant(h_tilde.len(), d, h_tilde.concat())?;
        let out = self.forward(&mut tape, store, h, &[graph])?;
        let rows = |v: Var| -> Vec<Vec<f64>> { (0..graph.len()).map(|r| tape.row(v, r).to_vec()).collect() };
        Ok(RgseValues {
            s_forward: rows(out.s_forward),
            s_backward: rows(out.s_backward),
            eta: rows(out.eta),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgseValues {
    pub s_forward: Vec<Vec<f64>>,
    pub s_backward: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Temporal;
    use alloc::string::ToString;

    fn self_edge(j: usize) -> EdgeRef {
        EdgeRef {
            source_position: j,
            target_position: j,
            temporal: Temporal::SelfLoop,
        }
    }

    fn edge(i: usize, j: usize) -> EdgeRef {
        EdgeRef {
            source_position: i,
            target_position: j,
            temporal: if i < j { Temporal::Past } else { Temporal::Future },
        }
    }

    #[test]
    fn average_of_single_self_edge() {
        let out = integrate(PhiMode::Average, None, &[self_edge(0)], &[vec![1.0, -1.0]]).unwrap();
        assert_eq!(out, vec![1.0, -1.0]);
    }

    #[test]
    fn sum_of_two_edges() {
        let states = [vec![1.0, 2.0], vec![3.0, 4.0]];
        let out = integrate(PhiMode::Sum, None, &[edge(0, 1), self_edge(1)], &states).unwrap();
        assert_eq!(out, vec![4.0, 6.0]);
    }

    #[test]
    fn gated_with_zero_gate_halves() {
        let states = [vec![2.0, 4.0], vec![-2.0, 0.0]];
        let out = integrate(PhiMode::Gated, Some((&[0.0; 4], &[0.0; 2])), &[edge(0, 1), self_edge(1)], &states).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    #[test]
    fn empty_edges_violate_contract() {
        let err = integrate(PhiMode::Sum, None, &[], &[vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    fn sentence(n: usize) -> DepGraph {
        let toks = (0..n).map(|i| i.to_string()).collect();
        let heads: Vec<Option<usize>> = (0..n).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        DepGraph::from_heads("s", toks, &heads, None).unwrap()
    }

    #[test]
    fn zero_inputs_stay_zero() {
        for variant in Variant::ALL {
            let mut store = ParamStore::new(3);
            let layer = RgseLayer::register(&mut store, "r", RgseConfig::new(variant, PhiMode::Gated, TauMode::Gated, 3)).unwrap();
            let vals = layer.apply(&store, &vec![vec![0.0; 3]; 4], &sentence(4)).unwrap();
            assert!(vals.s_forward.iter().chain(&vals.s_backward).flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_token_variants_agree() {
        let g = sentence(1);
        let h = vec![vec![0.3, -0.2]];
        let run = |variant| {
            let mut store = ParamStore::new(11);
            let layer = RgseLayer::register(&mut store, "r", RgseConfig::new(variant, PhiMode::Sum, TauMode::Normal, 2)).unwrap();
            layer.apply(&store, &h, &g).unwrap()
        };
        let total = run(Variant::BiTotal);
        assert_eq!(total, run(Variant::BiPast));
        assert_eq!(total, run(Variant::BiFuture));
    }

    #[test]
    fn normal_residual_of_zero_states() {
        let mut store = ParamStore::new(0);
        let layer = RgseLayer::register(&mut store, "r", RgseConfig::new(Variant::BiTotal, PhiMode::Sum, TauMode::Normal, 2)).unwrap();
        let mut t = Tape::new();
        let z = t.zeros(1, 2);
        let h = t.constant(1, 2, vec![0.5, -1.5]).unwrap();
        let eta = layer.combine(&mut t, &store, z, z, h).unwrap();
        assert_eq!(t.value(eta), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn gated_residual_with_zero_gates_halves() {
        let mut store = ParamStore::new(0);
        let layer = RgseLayer::register(&mut store, "r", RgseConfig::new(Variant::BiTotal, PhiMode::Sum, TauMode::Gated, 2)).unwrap();
        for n in ["r.tau.fwd.omega", "r.tau.fwd.psi", "r.tau.bwd.omega", "r.tau.bwd.psi"] {
            store.set(n, &[0.0, 0.0]).unwrap();
        }
        let mut t = Tape::new();
        let sf = t.constant(1, 2, vec![1.0, 2.0]).unwrap();
        let sb = t.constant(1, 2, vec![-1.0, 4.0]).unwrap();
        let h = t.constant(1, 2, vec![3.0, 0.0]).unwrap();
        let eta = layer.combine(&mut t, &store, sf, sb, h).unwrap();
        assert_eq!(t.value(eta), &[2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn mismatched_residual_widths_rejected() {
        let mut cfg = RgseConfig::new(Variant::BiTotal, PhiMode::Sum, TauMode::Normal, 4);
        cfg.state_dim = 3;
        assert!(RgseLayer::register(&mut ParamStore::new(0), "r", cfg).is_err());
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let mut store = ParamStore::new(0);
        let layer = RgseLayer::register(&mut store, "r", RgseConfig::new(Variant::BiTotal, PhiMode::Sum, TauMode::Normal, 2)).unwrap();
        let err = layer.apply(&store, &[vec![0.0, 0.0]], &sentence(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("gated".parse::<PhiMode>().unwrap(), PhiMode::Gated);
        assert!("bogus".parse::<TauMode>().is_err());
    }
}
