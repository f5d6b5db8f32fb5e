use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::arg(format!("learning rate must be finite and non-negative, got {learning_rate}")));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            steps: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update from the gradients held in `store`, then zero them.
    /// Every parameter must carry a gradient slot.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::State(format!("parameter `{name}` has no gradient")));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (_, t) in store.iter_mut() {
                    let (data, grad) = t.split_mut();
                    let grad = grad.expect("checked above");
                    for (p, g) in data.iter_mut().zip(grad.iter_mut()) {
                        *p -= lr * *g;
                        *g = 0.0;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                for (name, tensor) in store.iter_mut() {
                    let (m, v) = self
                        .moments
                        .entry(String::from(name))
                        .or_insert_with(|| (vec![0.0; tensor.len()], vec![0.0; tensor.len()]));
                    let (data, grad) = tensor.split_mut();
                    let grad = grad.expect("checked above");
                    for i in 0..data.len() {
                        let g = grad[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        data[i] -= lr * mhat / (libm::sqrt(vhat) + eps);
                        grad[i] = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}
