//! Named trainable parameters.
//!
//! Initialisation is keyed by `(seed, name)`: each tensor draws from its own
//! ChaCha stream, so a parameter's initial value does not depend on which
//! other parameters exist. Two models that share a parameter subset start
//! from bitwise-identical values for that subset.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

/// FNV-1a; stable across platforms and releases.
pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed ^ stable_hash(name))
    }

    /// Register an explicit tensor.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::State(format!("parameter `{name}` registered twice")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    /// `fan_in × fan_out` matrix, uniform in `±1/√fan_in`.
    pub fn matrix(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        self.uniform(name, vec![fan_in, fan_out], bound)
    }

    /// Row vector of width `n` initialised like a matrix with fan-in `fan_in`.
    pub fn gate_vector(&mut self, name: &str, n: usize, fan_in: usize) -> Result<()> {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        self.uniform(name, vec![n], bound)
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<()> {
        let mut rng = self.rng_for(name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn bias(&mut self, name: &str, n: usize) -> Result<()> {
        self.insert(name, Tensor::zeros(vec![n]))
    }

    pub fn ones(&mut self, name: &str, n: usize) -> Result<()> {
        self.insert(name, Tensor::filled(vec![n], 1.0))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Overwrite a parameter's values, keeping its shape.
    pub fn set(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))?;
        if t.len() != data.len() {
            return Err(Error::dim("set", t.shape(), &[data.len()]));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Iterate in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Set every gradient slot to zeros.
    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))?
            .accumulate_grad(delta)
    }

    /// Euclidean norm over every populated gradient.
    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .params
            .values()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum();
        libm::sqrt(sq)
    }

    /// Rescale gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.params.values_mut() {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    /// Name and norm of the parameter with the largest values, for diagnostics.
    pub fn largest_param(&self) -> Option<(String, f64)> {
        self.params
            .iter()
            .map(|(k, t)| (k.clone(), libm::sqrt(t.data().iter().map(|v| v * v).sum::<f64>())))
            .fold(None, |best: Option<(String, f64)>, cur| match best {
                Some(b) if !cur.1.is_nan() && (b.1.is_nan() || cur.1 <= b.1) => Some(b),
                _ => Some(cur),
            })
    }

    /// Names present in `self` but with a different shape in `other`, or
    /// missing from either side.
    pub fn shape_diff(&self, other: &ParamStore) -> Vec<String> {
        let mut out = Vec::new();
        for (k, t) in &self.params {
            match other.params.get(k) {
                None => out.push(format!("{k}: missing from checkpoint")),
                Some(o) if o.shape() != t.shape() => {
                    out.push(format!("{k}: expected {:?}, found {:?}", t.shape(), o.shape()))
                }
                _ => {}
            }
        }
        for k in other.params.keys() {
            if !self.params.contains_key(k) {
                out.push(format!("{k}: unexpected in checkpoint"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_init() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            s.matrix("a.w", 4, 3).unwrap();
            s.bias("a.b", 3).unwrap();
            s
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }

    #[test]
    fn init_is_independent_of_other_params() {
        let mut a = ParamStore::new(1);
        a.matrix("x", 3, 3).unwrap();
        let mut b = ParamStore::new(1);
        b.matrix("other", 5, 5).unwrap();
        b.matrix("x", 3, 3).unwrap();
        assert_eq!(a.get("x"), b.get("x"));
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let mut s = ParamStore::new(3);
        s.matrix("w", 16, 4).unwrap();
        s.bias("b", 4).unwrap();
        assert!(s.get("w").unwrap().data().iter().all(|v| v.abs() <= 0.25));
        assert!(s.get("b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.bias("b", 2).unwrap();
        assert!(s.bias("b", 2).is_err());
    }

    #[test]
    fn clipping_scales_global_norm() {
        let mut s = ParamStore::new(0);
        s.bias("a", 2).unwrap();
        s.accumulate_grad("a", &[3.0, 4.0]).unwrap();
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        let g = s.get("a").unwrap().grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
