//! Dense row-major f64 arrays with an optional gradient slot.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// View as a matrix: rank-1 tensors are a single row, higher ranks fold
    /// every leading axis into the row count.
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::dim("accumulate_grad", &self.shape, &[delta.len()]));
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (a, d) in g.iter_mut().zip(delta) {
            *a += d;
        }
        Ok(())
    }

    pub(crate) fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    /// Gradient and data borrowed together.
    pub(crate) fn split_mut(&mut self) -> (&mut [f64], Option<&mut Vec<f64>>) {
        (&mut self.data, self.grad.as_mut())
    }
}

/// `out(m×n) += a(m×k) · b(k×n)`
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out(m×n) += a(m×k) · b(n×k)ᵀ`
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out(k×n) += a(m×k)ᵀ · b(m×n)`
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    mm_nn(&a.data, &b.data, m, k, n, &mut out);
    Tensor::matrix(m, n, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Add,
    Mul,
    Sub,
}

/// Apply a unary (`sigmoid`, `tanh`) or binary (`add`, `mul`, `sub`) map.
/// Binary operands must share a shape unless one of them holds a single value.
pub fn elementwise(op: Elementwise, args: &[&Tensor]) -> Result<Tensor> {
    match op {
        Elementwise::Sigmoid | Elementwise::Tanh => {
            let [x] = args else {
                return Err(Error::arg("unary op takes one operand"));
            };
            let f: fn(f64) -> f64 = if op == Elementwise::Sigmoid {
                |v| 1.0 / (1.0 + libm::exp(-v))
            } else {
                libm::tanh
            };
            Tensor::new(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect())
        }
        Elementwise::Add | Elementwise::Mul | Elementwise::Sub => {
            let [a, b] = args else {
                return Err(Error::arg("binary op takes two operands"));
            };
            let f: fn(f64, f64) -> f64 = match op {
                Elementwise::Add => |x, y| x + y,
                Elementwise::Mul => |x, y| x * y,
                _ => |x, y| x - y,
            };
            if a.shape == b.shape {
                Tensor::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
            } else if b.data.len() == 1 {
                Tensor::new(a.shape.clone(), a.data.iter().map(|&x| f(x, b.data[0])).collect())
            } else if a.data.len() == 1 {
                Tensor::new(b.shape.clone(), b.data.iter().map(|&y| f(a.data[0], y)).collect())
            } else {
                Err(Error::dim("elementwise", &a.shape, &b.shape))
            }
        }
    }
}

/// Numerically stable softmax of `scale · x`.
pub fn softmax(x: &[f64], scale: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::arg("softmax scale must be positive"));
    }
    let max = x.iter().map(|v| v * scale).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| libm::exp(v * scale - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn grad_matches_shape() {
        let mut t = Tensor::zeros(vec![2, 2]);
        t.accumulate_grad(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0, 5.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 4]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let row = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let col = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(matmul(&row, &col).unwrap().data(), &[0.0]);
        assert!(matches!(matmul(&row, &row), Err(Error::Dimension { .. })));
    }

    #[test]
    fn elementwise_examples() {
        let z = Tensor::vector(vec![0.0]);
        assert_eq!(elementwise(Elementwise::Sigmoid, &[&z]).unwrap().data(), &[0.5]);
        assert_eq!(elementwise(Elementwise::Tanh, &[&z]).unwrap().data(), &[0.0]);
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(elementwise(Elementwise::Mul, &[&a, &b]).unwrap().data(), &[3.0, 8.0]);
        let c = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(elementwise(Elementwise::Add, &[&a, &c]).is_err());
        let two = Tensor::vector(vec![2.0]);
        assert_eq!(elementwise(Elementwise::Sub, &[&a, &two]).unwrap().data(), &[-1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0], 1.0).unwrap(), vec![0.5, 0.5]);
        assert!(softmax(&[], 1.0).is_err());
        assert!(softmax(&[1.0], 0.0).is_err());
    }

    #[test]
    fn matrix_view() {
        assert_eq!(Tensor::vector(vec![1.0, 2.0, 3.0]).as_matrix_dims(), (1, 3));
        assert_eq!(Tensor::zeros(vec![2, 3, 4]).as_matrix_dims(), (6, 4));
    }
}
