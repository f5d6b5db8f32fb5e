//! Straight-line reference implementations.
//!
//! Everything here recomputes a layer with explicit loops over plain
//! vectors and reads parameters straight from a [`ParamStore`]. Nothing
//! goes through the tape, so agreement with the tape-based layers is
//! independent evidence that both are right.

use rgse_core::graph::DepGraph;
use rgse_core::rgse::{PhiMode, TauMode, Variant};
use rgse_core::ParamStore;

pub type Row = Vec<f64>;

fn param<'a>(store: &'a ParamStore, name: &str) -> &'a [f64] {
    store.get(name).unwrap_or_else(|| panic!("oracle: parameter `{name}` is missing")).data()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · W` for a row vector `x` and a row-major `W` with `x.len()` rows.
pub fn vec_mat(x: &[f64], w: &[f64]) -> Row {
    let cols = w.len() / x.len().max(1);
    let mut out = vec![0.0; cols];
    for (r, xr) in x.iter().enumerate() {
        for c in 0..cols {
            out[c] += xr * w[r * cols + c];
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Row {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Non-self neighbours of `j`: its dependents and its head.
fn neighbours(graph: &DepGraph, j: usize) -> Vec<usize> {
    let mut n = Vec::new();
    for e in graph.edges() {
        if e.head == j {
            n.push(e.dependent);
        }
        if e.dependent == j {
            n.push(e.head);
        }
    }
    n.sort_unstable();
    n.dedup();
    n
}

/// Source positions node `j` reads under `variant` when scanning forward
/// (`forward == true`) or backward. The self edge is always first.
pub fn sources(graph: &DepGraph, j: usize, variant: Variant, forward: bool) -> Vec<usize> {
    let mut out = vec![j];
    for i in neighbours(graph, j) {
        let past = if forward { i < j } else { i > j };
        let keep = match variant {
            Variant::Forward | Variant::BiTotal => true,
            Variant::BiPast => past,
            Variant::BiFuture => !past,
        };
        if keep {
            out.push(i);
        }
    }
    out
}

/// `φ` over the listed source states.
pub fn phi(mode: PhiMode, gate: Option<(&[f64], &[f64])>, srcs: &[usize], states: &[Row]) -> Row {
    let d = states[0].len();
    let mut out = vec![0.0; d];
    for &i in srcs {
        let h = &states[i];
        let g: Row = match (mode, gate) {
            (PhiMode::Gated, Some((w, b))) => add(&vec_mat(h, w), b).into_iter().map(sigmoid).collect(),
            (PhiMode::Gated, None) => panic!("oracle: gated φ needs gate parameters"),
            _ => vec![1.0; d],
        };
        for k in 0..d {
            out[k] += g[k] * h[k];
        }
    }
    if mode == PhiMode::Average {
        for v in &mut out {
            *v /= srcs.len() as f64;
        }
    }
    out
}

/// `[s→ + h ; s← + h]`
pub fn tau_normal(s_f: &[f64], s_b: &[f64], h: &[f64]) -> Row {
    let mut out = add(s_f, h);
    out.extend(add(s_b, h));
    out
}

fn blend(s: &[f64], h: &[f64], omega: &[f64], psi: &[f64]) -> Row {
    (0..s.len())
        .map(|k| {
            let lambda = sigmoid(omega[k] * s[k] + psi[k] * h[k]);
            lambda * s[k] + (1.0 - lambda) * h[k]
        })
        .collect()
}

/// Gated residual with the `ω`/`ψ` vectors of an RGSE layer at `prefix`.
pub fn tau_gated(store: &ParamStore, prefix: &str, s_f: &[f64], s_b: &[f64], h: &[f64]) -> Row {
    let mut out = blend(s_f, h, param(store, &format!("{prefix}.tau.fwd.omega")), param(store, &format!("{prefix}.tau.fwd.psi")));
    out.extend(blend(s_b, h, param(store, &format!("{prefix}.tau.bwd.omega")), param(store, &format!("{prefix}.tau.bwd.psi"))));
    out
}

/// One GRU step of the cell registered at `prefix`.
pub fn gru_step(store: &ParamStore, prefix: &str, prev: &[f64], x: &[f64]) -> Row {
    let p = |n: &str| param(store, &format!("{prefix}.{n}"));
    let d = prev.len();
    let zs = vec_mat(prev, p("z_state"));
    let zx = vec_mat(x, p("z_input"));
    let rs = vec_mat(prev, p("r_state"));
    let rx = vec_mat(x, p("r_input"));
    let (bz, br) = (p("z_bias"), p("r_bias"));
    let z: Row = (0..d).map(|k| sigmoid(zs[k] + zx[k] + bz[k])).collect();
    let r: Row = (0..d).map(|k| sigmoid(rs[k] + rx[k] + br[k])).collect();
    let gated: Row = (0..d).map(|k| r[k] * prev[k]).collect();
    let cx = vec_mat(x, p("cand_input"));
    let cs = vec_mat(&gated, p("cand_state"));
    (0..d)
        .map(|k| {
            let cand = (cx[k] + cs[k]).tanh();
            z[k] * prev[k] + (1.0 - z[k]) * cand
        })
        .collect()
}

/// GRU over `xs`, left to right or right to left, from a zero state.
pub fn gru_scan(store: &ParamStore, prefix: &str, xs: &[Row], state_dim: usize, reverse: bool) -> Vec<Row> {
    let mut out = vec![Vec::new(); xs.len()];
    let mut s = vec![0.0; state_dim];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        s = gru_step(store, prefix, &s, &xs[t]);
        out[t] = s.clone();
    }
    out
}

fn softmax(scores: &[f64]) -> Row {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Row = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Multi-head scaled dot-product attention of one query row over `memory`,
/// through the output projection of the attention registered at `prefix`.
pub fn attention_row(store: &ParamStore, prefix: &str, heads: usize, query: &[f64], memory: &[Row]) -> Row {
    let p = |n: &str| param(store, &format!("{prefix}.{n}"));
    let d = query.len();
    let dh = d / heads;
    let q = vec_mat(query, p("q"));
    let ks: Vec<Row> = memory.iter().map(|m| vec_mat(m, p("k"))).collect();
    let vs: Vec<Row> = memory.iter().map(|m| vec_mat(m, p("v"))).collect();
    let mut cat = vec![0.0; d];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let scores: Row = ks
            .iter()
            .map(|k| cols.clone().map(|c| q[c] * k[c]).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let w = softmax(&scores);
        for c in cols {
            cat[c] = w.iter().zip(&vs).map(|(a, v)| a * v[c]).sum();
        }
    }
    add(&vec_mat(&cat, p("o")), p("o_bias"))
}

/// Additive attention weights `softmax_j(v · tanh(s W + m_j U))` of the
/// RNMT decoder.
pub fn additive_attention(store: &ParamStore, state: &[f64], memory: &[Row]) -> Row {
    let ws = vec_mat(state, param(store, "dec.att.w"));
    let v = param(store, "dec.att.v");
    let scores: Row = memory
        .iter()
        .map(|m| {
            let um = vec_mat(m, param(store, "dec.att.u"));
            (0..ws.len()).map(|k| v[k] * (ws[k] + um[k]).tanh()).sum()
        })
        .collect();
    softmax(&scores)
}

/// Output of node `v` of the GCN layer at `prefix` without dropout.
/// `known` lists labels that have their own bias; others use `default`.
pub fn gcn_node(store: &ParamStore, prefix: &str, known: &[&str], graph: &DepGraph, h: &[Row], v: usize) -> Row {
    let p = |n: &str| param(store, &format!("{prefix}.{n}"));
    let bias = |label: &str| {
        let l = if known.contains(&label) { label } else { "default" };
        param(store, &format!("{prefix}.b_lab.{l}"))
    };
    let mut pre = add(&vec_mat(&h[v], p("w_self")), bias("self"));
    for e in graph.edges() {
        if e.head == v {
            pre = add(&add(&pre, &vec_mat(&h[e.dependent], p("w_in"))), bias(&e.label));
        }
        if e.dependent == v {
            pre = add(&add(&pre, &vec_mat(&h[e.head], p("w_out"))), bias(&e.label));
        }
    }
    pre.into_iter().map(|x| x.max(0.0)).collect()
}

/// Full RGSE layer at `prefix`: `(s→, s←, η)` per token.
pub struct Propagated {
    pub s_forward: Vec<Row>,
    pub s_backward: Vec<Row>,
    pub eta: Vec<Row>,
}

pub fn rgse_propagate(
    store: &ParamStore,
    prefix: &str,
    variant: Variant,
    mode: PhiMode,
    tau: TauMode,
    graph: &DepGraph,
    h: &[Row],
) -> Propagated {
    let d = h[0].len();
    let gate_w;
    let gate_b;
    let gate = if mode == PhiMode::Gated {
        gate_w = param(store, &format!("{prefix}.phi.gate_w"));
        gate_b = param(store, &format!("{prefix}.phi.gate_b"));
        Some((gate_w, gate_b))
    } else {
        None
    };
    let n = graph.len();
    let phi_f: Vec<Row> = (0..n).map(|j| phi(mode, gate, &sources(graph, j, variant, true), h)).collect();
    let phi_b: Vec<Row> = (0..n).map(|j| phi(mode, gate, &sources(graph, j, variant, false), h)).collect();
    let s_forward = gru_scan(store, &format!("{prefix}.fwd"), &phi_f, d, false);
    let s_backward = if variant == Variant::Forward {
        vec![vec![0.0; d]; n]
    } else {
        gru_scan(store, &format!("{prefix}.bwd"), &phi_b, d, true)
    };
    let eta = (0..n)
        .map(|j| match tau {
            TauMode::Normal => tau_normal(&s_forward[j], &s_backward[j], &h[j]),
            TauMode::Gated => tau_gated(store, prefix, &s_forward[j], &s_backward[j], &h[j]),
        })
        .collect();
    Propagated {
        s_forward,
        s_backward,
        eta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_mat_by_hand() {
        // [1 2] · [[1 2 3] [4 5 6]] = [9 12 15]
        assert_eq!(vec_mat(&[1.0, 2.0], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), vec![9.0, 12.0, 15.0]);
    }

    #[test]
    fn average_of_two_states() {
        let states = vec![vec![1.0, 3.0], vec![3.0, 5.0]];
        assert_eq!(phi(PhiMode::Average, None, &[0, 1], &states), vec![2.0, 4.0]);
        assert_eq!(phi(PhiMode::Sum, None, &[0, 1], &states), vec![4.0, 8.0]);
    }

    #[test]
    fn softmax_is_uniform_on_ties() {
        assert_eq!(softmax(&[0.3, 0.3]), vec![0.5, 0.5]);
    }
}
