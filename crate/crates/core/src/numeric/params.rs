use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{dim_err, CdnError, Result};

use super::{Scalar, Tape, Tensor, Var};

/// Learnable parameters keyed by dot-separated path.
///
/// Iteration is lexicographic by path, which fixes the order of every
/// optimizer update and checkpoint record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(CdnError::Contract(format!("duplicate parameter path {path}")));
        }
        self.params.insert(path, t.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<F>> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    pub fn clear_grads(&mut self) {
        for t in self.params.values_mut() {
            t.clear_grad();
        }
    }

    /// Put every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tape.variable(t.clone())))
            .collect();
        Bindings { vars }
    }

    /// Add the tape's gradients into each parameter's `grad`. Parameters the
    /// loss did not reach receive an explicit zero gradient.
    pub fn accumulate_grads(&mut self, tape: &Tape<F>, bindings: &Bindings) -> Result<()> {
        for (path, t) in self.params.iter_mut() {
            let var = bindings.get(path)?;
            if t.grad().is_none() {
                t.set_grad(vec![F::zero(); t.len()])?;
            }
            if let Some(g) = tape.grad(var) {
                let dst = t.grad_mut().expect("grad initialised above");
                if dst.len() != g.len() {
                    return Err(dim_err!("gradient size mismatch for {path}"));
                }
                dst.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
            }
        }
        Ok(())
    }

    /// Euclidean norm over all gradients (missing gradients count as zero).
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: F) {
        for t in self.params.values_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x = *x * factor);
            }
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<G>()))
                .collect(),
        }
    }
}

/// Map from parameter path to the tape leaf holding it.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings { vars: BTreeMap::new() }
    }

    /// Bind `path` to an existing tape value, replacing any previous binding.
    pub fn insert(&mut self, path: impl Into<String>, v: Var) {
        self.vars.insert(path.into(), v);
    }

    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| CdnError::Contract(format!("unknown parameter {path}")))
    }
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialisation.
pub fn uniform_fan_in<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
