//! AdamW: Adam moments with bias correction and weight decay applied
//! directly to the weights rather than folded into the gradient.
//!
//! ```text
//! w ← w − lr·λ·w
//! m ← β₁·m + (1 − β₁)·g
//! v ← β₂·v + (1 − β₂)·g²
//! w ← w − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! ```

use std::collections::BTreeMap;

use crate::error::{CdnError, Result};

use super::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamWState<F> {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Vec<F>>,
    second: BTreeMap<String, Vec<F>>,
}

impl<F: Scalar> AdamWState<F> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamWState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn first_moment(&self, path: &str) -> Option<&[F]> {
        self.first.get(path).map(Vec::as_slice)
    }

    pub fn second_moment(&self, path: &str) -> Option<&[F]> {
        self.second.get(path).map(Vec::as_slice)
    }

    /// One update of every parameter in `store`, then zero its gradients.
    ///
    /// Every parameter must carry a gradient; the store is left untouched if
    /// one does not.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        if let Some((path, _)) = store.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(CdnError::Contract(format!(
                "parameter {path} has no gradient"
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let f = F::from_f64_lossy;
        let (b1, b2) = (f(c.beta1), f(c.beta2));
        let bc1 = f(1.0 - c.beta1.powi(t));
        let bc2 = f(1.0 - c.beta2.powi(t));
        let lr = f(c.lr);
        let decay = F::one() - f(c.lr * c.weight_decay);
        let eps = f(c.eps);
        for (path, param) in store.iter_mut() {
            let n = param.len();
            let m = self
                .first
                .entry(path.to_string())
                .or_insert_with(|| vec![F::zero(); n]);
            let v = self
                .second
                .entry(path.to_string())
                .or_insert_with(|| vec![F::zero(); n]);
            let grad = param.grad().expect("checked above").to_vec();
            let w = param.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + (F::one() - b1) * g;
                v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] = w[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
            param.zero_grad();
        }
        Ok(())
    }
}
