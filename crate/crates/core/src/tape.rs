//! Reverse-mode automatic differentiation over 2-D f64 matrices.
//!
//! Every operation appends a node holding its value and the recipe to push
//! gradients back to its inputs. A [`Tape`] is built fresh for each forward
//! pass; parameters are copied in from a [`ParamStore`] by name and their
//! gradients are accumulated back into the store after [`Tape::backward`].
//!
//! All values are matrices (`rows × cols`, row-major). Sequences of vectors
//! are stored one vector per row; a batch of `B` sentences of length `L` is
//! laid out with row index `b * L + t` unless stated otherwise.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{mm_nn, mm_nt, mm_tn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse row-mixing weights: output row `r` is `Σ w · input[k]` over
/// `(k, w)` in entry `r`.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchedMatMul {
        a: Var,
        b: Var,
        groups: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    RowMix(Var, SparseRows),
    Reshape(Var),
    Softmax(Var, f64),
    LayerNorm(Var, Vec<f64>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.node(v).rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.node(v).cols
    }

    /// Row `r` of `v`.
    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = self.node(v);
        &n.value[r * n.cols..(r + 1) * n.cols]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::dim("constant", &[rows, cols], &[data.len()]));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Leaf, false)
    }

    /// A differentiable leaf not backed by the store (used by tests and the
    /// gradient checker).
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::dim("variable", &[rows, cols], &[data.len()]));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, true))
    }

    /// Bind a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::State(alloc::format!("unknown parameter `{name}`")))?;
        let (r, c) = t.as_matrix_dims();
        let v = self.push(r, c, t.data().to_vec(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        mm_nn(self.value(a), self.value(b), m, k, n, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// Group-wise product. `a` holds `groups` stacked `m×k` blocks; `b` holds
    /// `groups` stacked `k×n` blocks (or `n×k` blocks when `trans_b`).
    pub fn batched_matmul(&mut self, a: Var, b: Var, groups: usize, trans_b: bool) -> Result<Var> {
        let (ra, k) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if groups == 0 || ra % groups != 0 || rb % groups != 0 {
            return Err(Error::dim("batched_matmul", &[ra, k, groups], &[rb, cb]));
        }
        let m = ra / groups;
        let (bk, n) = if trans_b { (cb, rb / groups) } else { (rb / groups, cb) };
        if bk != k {
            return Err(Error::dim("batched_matmul", &[ra, k], &[rb, cb]));
        }
        let mut out = vec![0.0; groups * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for g in 0..groups {
                let ag = &av[g * m * k..(g + 1) * m * k];
                let bg = &bv[g * k * n..(g + 1) * k * n];
                let og = &mut out[g * m * n..(g + 1) * m * n];
                if trans_b {
                    mm_nt(ag, bg, m, k, n, og);
                } else {
                    mm_nn(ag, bg, m, k, n, og);
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            groups * m,
            n,
            out,
            Op::BatchedMatMul {
                a,
                b,
                groups,
                trans_b,
            },
            ng,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(Error::dim(op, &[da.0, da.1], &[db.0, db.1]));
        }
        Ok(da)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (r, c) = self.same_shape(op, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, node, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, out, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, libm::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    fn row_op(&mut self, a: Var, row: Var, op: &'static str, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != c {
            return Err(Error::dim(op, &[r, c], &[rr, rc]));
        }
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| f(x, y)))
            .collect();
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(r, c, out, node, ng))
    }

    /// Add a `1×c` row vector to every row of `a` (bias addition).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, "add_row", |x, y| x + y, Op::AddRow(a, row))
    }

    /// Multiply every row of `a` elementwise by a `1×c` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, "mul_row", |x, y| x * y, Op::MulRow(a, row))
    }

    /// `x · w + b` with `b` a row vector.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.rows(*parts.first().ok_or_else(|| Error::arg("concat_cols of nothing"))?);
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::dim("concat_cols", &[rows], &[r, c]));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.row(p, r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(Error::dim("slice_cols", &[r, c], &[start, len]));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.row(a, i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(r, len, out, Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.cols(*parts.first().ok_or_else(|| Error::arg("concat_rows of nothing"))?);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::dim("concat_rows", &[cols], &[r, c]));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Output row `i` is input row `idx[i]`. Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::dim("gather_rows", &[r, c], &[i]));
            }
            out.extend_from_slice(self.row(a, i));
        }
        let ng = self.ng(a);
        Ok(self.push(idx.len(), c, out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Sparse weighted row sums; see [`SparseRows`].
    pub fn row_mix(&mut self, a: Var, mix: SparseRows) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; mix.len() * c];
        for (o, entries) in mix.iter().enumerate() {
            let dst = &mut out[o * c..(o + 1) * c];
            for &(k, w) in entries {
                if k >= r {
                    return Err(Error::dim("row_mix", &[r, c], &[k]));
                }
                let src = &self.nodes[a.0].value[k * c..(k + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(mix.len(), c, out, Op::RowMix(a, mix), ng))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r * c != rows * cols {
            return Err(Error::dim("reshape", &[r, c], &[rows, cols]));
        }
        let out = self.value(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(rows, cols, out, Op::Reshape(a), ng))
    }

    /// Row-wise softmax of `scale · a`. `mask[i]` false excludes element `i`
    /// (its probability is exactly zero). Every row needs one unmasked entry.
    pub fn softmax_rows(&mut self, a: Var, scale: f64, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(Error::arg("softmax over an empty row"));
        }
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::dim("softmax_rows mask", &[r, c], &[m.len()]));
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let x = self.row(a, i);
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            if !(0..c).any(keep) {
                return Err(Error::arg(alloc::format!("softmax row {i} is fully masked")));
            }
            // NaN wins so that it reaches the loss instead of vanishing here
            let max = (0..c).filter(|&j| keep(j)).map(|j| scale * x[j]).fold(f64::NEG_INFINITY, |m, v| {
                if v.is_nan() || m.is_nan() {
                    f64::NAN
                } else {
                    m.max(v)
                }
            });
            let dst = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (j, &v) in x.iter().enumerate() {
                if keep(j) {
                    let e = libm::exp(scale * v - max);
                    dst[j] = e;
                    sum += e;
                }
            }
            dst.iter_mut().for_each(|d| *d /= sum);
        }
        let ng = self.ng(a);
        Ok(self.push(r, c, out, Op::Softmax(a, scale), ng))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; r * c];
        let mut inv = Vec::with_capacity(r);
        for i in 0..r {
            let x = self.row(a, i);
            let mean = x.iter().sum::<f64>() / c as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / libm::sqrt(var + eps);
            for (d, v) in out[i * c..(i + 1) * c].iter_mut().zip(x) {
                *d = (v - mean) * s;
            }
            inv.push(s);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::LayerNorm(a, inv), ng)
    }

    /// Mean token cross-entropy of row-wise logits against class targets.
    /// Rows with a `None` target are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(Error::dim("cross_entropy", &[r, c], &[targets.len()]));
        }
        let mut probs = vec![0.0; r * c];
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..r {
            let x = self.row(logits, i);
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (d, &v) in p.iter_mut().zip(x) {
                *d = libm::exp(v - max);
                sum += *d;
            }
            p.iter_mut().for_each(|d| *d /= sum);
            if let Some(t) = targets[i] {
                if t >= c {
                    return Err(Error::dim("cross_entropy target", &[c], &[t]));
                }
                total += libm::log(sum) + max - x[t];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::arg("cross_entropy without any target"));
        }
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            vec![total / count as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::SumAll(a), ng)
    }

    /// Back-propagate from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(Error::dim("backward", &[1, 1], &[r, c]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.push_back(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Back-propagate and add parameter gradients into the store.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (name, v) in self.bound_params() {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn push_back(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &[f64] { &nodes[v.0].value };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    mm_nt(g, val(*b), m, n, k, ga);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    mm_tn(val(*a), g, m, k, n, gb);
                }
            }
            Op::BatchedMatMul {
                a,
                b,
                groups,
                trans_b,
            } => {
                let groups = *groups;
                let m = nodes[a.0].rows / groups;
                let k = nodes[a.0].cols;
                let n = node.cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    let bv = val(*b);
                    for gi in 0..groups {
                        let gg = &g[gi * m * n..(gi + 1) * m * n];
                        let bg = &bv[gi * k * n..(gi + 1) * k * n];
                        let dst = &mut ga[gi * m * k..(gi + 1) * m * k];
                        if *trans_b {
                            mm_nn(gg, bg, m, n, k, dst);
                        } else {
                            mm_nt(gg, bg, m, n, k, dst);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    let av = val(*a);
                    for gi in 0..groups {
                        let gg = &g[gi * m * n..(gi + 1) * m * n];
                        let ag = &av[gi * m * k..(gi + 1) * m * k];
                        let dst = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            mm_tn(gg, ag, m, n, k, dst);
                        } else {
                            mm_tn(ag, gg, m, k, n, dst);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, *s);
                }
            }
            Op::OneMinus(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, -1.0);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, gi), x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                let c = node.cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gr) = slot(nodes, grads, *row) {
                    for chunk in g.chunks(c.max(1)) {
                        axpy(gr, chunk, 1.0);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let c = node.cols.max(1);
                if let Some(ga) = slot(nodes, grads, *a) {
                    let rv = val(*row);
                    for (dchunk, gchunk) in ga.chunks_mut(c).zip(g.chunks(c)) {
                        for ((d, gi), y) in dchunk.iter_mut().zip(gchunk).zip(rv) {
                            *d += gi * y;
                        }
                    }
                }
                if let Some(gr) = slot(nodes, grads, *row) {
                    for (gchunk, xchunk) in g.chunks(c).zip(val(*a).chunks(c)) {
                        for ((d, gi), x) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                            *d += gi * x;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].cols;
                    if let Some(gp) = slot(nodes, grads, p) {
                        for r in 0..node.rows {
                            let src = &g[r * node.cols + offset..r * node.cols + offset + pc];
                            axpy(&mut gp[r * pc..(r + 1) * pc], src, 1.0);
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = nodes[a.0].cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for r in 0..node.rows {
                        let dst = &mut ga[r * ac + start..r * ac + start + node.cols];
                        axpy(dst, &g[r * node.cols..(r + 1) * node.cols], 1.0);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = slot(nodes, grads, p) {
                        axpy(gp, &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = node.cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (o, &i) in idx.iter().enumerate() {
                        axpy(&mut ga[i * c..(i + 1) * c], &g[o * c..(o + 1) * c], 1.0);
                    }
                }
            }
            Op::RowMix(a, mix) => {
                let c = node.cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (o, entries) in mix.iter().enumerate() {
                        for &(k, w) in entries {
                            axpy(&mut ga[k * c..(k + 1) * c], &g[o * c..(o + 1) * c], w);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, 1.0);
                }
            }
            Op::Softmax(a, scale) => {
                let c = node.cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for r in 0..node.rows {
                        let y = &node.value[r * c..(r + 1) * c];
                        let gy = &g[r * c..(r + 1) * c];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for ((d, yi), gi) in ga[r * c..(r + 1) * c].iter_mut().zip(y).zip(gy) {
                            *d += scale * yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm(a, inv) => {
                let c = node.cols;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for r in 0..node.rows {
                        let y = &node.value[r * c..(r + 1) * c];
                        let gy = &g[r * c..(r + 1) * c];
                        let mean_g = gy.iter().sum::<f64>() / c as f64;
                        let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for ((d, yi), gi) in ga[r * c..(r + 1) * c].iter_mut().zip(y).zip(gy) {
                            *d += inv[r] * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = nodes[logits.0].cols;
                let s = g[0] / *count as f64;
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let dst = &mut gl[r * c..(r + 1) * c];
                            axpy(dst, &probs[r * c..(r + 1) * c], s);
                            dst[*t] -= s;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences on a variable leaf for a scalar-valued builder.
    fn fd_check(rows: usize, cols: usize, x0: &[f64], build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.variable(rows, cols, x0.to_vec()).unwrap();
        let loss = build(&mut tape, x);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(x).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x0.len()]);
        let eps = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xs = x0.to_vec();
                xs[i] += delta;
                let mut t = Tape::new();
                let v = t.variable(rows, cols, xs).unwrap();
                let l = build(&mut t, v);
                t.scalar(l)
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
            assert!(err < 1e-6, "entry {i}: analytic {} numeric {numeric}", analytic[i]);
        }
    }

    const X: [f64; 6] = [0.3, -1.2, 0.7, 2.0, -0.4, 0.9];

    #[test]
    fn matmul_and_elementwise_grads() {
        fd_check(2, 3, &X, |t, x| {
            let w = t.constant(3, 2, vec![0.5, -1.0, 0.25, 0.75, -0.3, 1.1]).unwrap();
            let y = t.matmul(x, w).unwrap();
            let s = t.sigmoid(y);
            let h = t.tanh(x);
            let hs = t.slice_cols(h, 1, 2).unwrap();
            let m = t.mul(s, hs).unwrap();
            let o = t.one_minus(m);
            let q = t.mul(o, o).unwrap();
            t.sum_all(q)
        });
    }

    #[test]
    fn batched_matmul_grads() {
        for &trans in &[false, true] {
            fd_check(2, 3, &X, |t, x| {
                let y = t.batched_matmul(x, x, 2, trans).unwrap_or_else(|_| {
                    let r = t.reshape(x, 6, 1).unwrap();
                    t.batched_matmul(x, r, 2, false).unwrap()
                });
                let q = t.mul(y, y).unwrap();
                t.sum_all(q)
            });
        }
    }

    #[test]
    fn softmax_layer_norm_ce_grads() {
        fd_check(2, 3, &X, |t, x| {
            let mask = [true, false, true, true, true, true];
            let p = t.softmax_rows(x, 0.7, Some(&mask)).unwrap();
            let w = t.constant(2, 3, vec![1.0, 2.0, -1.0, 0.5, 0.1, 3.0]).unwrap();
            let pw = t.mul(p, w).unwrap();
            let n = t.layer_norm_rows(x, 1e-6);
            let s = t.add(pw, n).unwrap();
            t.cross_entropy(s, &[Some(2), Some(0)]).unwrap()
        });
    }

    #[test]
    fn structural_op_grads() {
        fd_check(2, 3, &X, |t, x| {
            let row = t.slice_cols(x, 0, 3).unwrap();
            let row = t.gather_rows(row, &[1]).unwrap();
            let a = t.add_row(x, row).unwrap();
            let m = t.mul_row(a, row).unwrap();
            let c = t.concat_cols(&[m, x]).unwrap();
            let r = t.concat_rows(&[c, c]).unwrap();
            let g = t.gather_rows(r, &[0, 3, 3, 1]).unwrap();
            let mix = t.row_mix(g, vec![vec![(0, 0.5), (2, 2.0)], vec![], vec![(3, -1.0)]]).unwrap();
            let rl = t.relu(mix);
            let sc = t.scale(rl, 3.0);
            let sq = t.mul(sc, mix).unwrap();
            t.sum_all(sq)
        });
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.zeros(2, 3);
        let b = t.zeros(2, 3);
        match t.matmul(a, b).unwrap_err() {
            Error::Dimension { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            e => panic!("unexpected {e:?}"),
        }
        let c = t.zeros(3, 2);
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let mut t = Tape::new();
        let a = t.zeros(1, 2);
        assert!(t.softmax_rows(a, 1.0, Some(&[false, false])).is_err());
    }

    #[test]
    fn softmax_propagates_nan() {
        let mut t = Tape::new();
        let a = t.constant(1, 3, vec![f64::NAN, f64::NAN, 0.0]).unwrap();
        let p = t.softmax_rows(a, 1.0, None).unwrap();
        assert!(t.row(p, 0).iter().all(|v| v.is_nan()));
        let b = t.constant(1, 2, vec![f64::NAN, 1.0]).unwrap();
        let q = t.softmax_rows(b, 1.0, Some(&[false, true])).unwrap();
        assert_eq!(t.row(q, 0), &[0.0, 1.0]);
    }
}
