//! Named trainable tensors with paired gradient buffers.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// An ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<ParamTensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::argument(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamTensor { name, value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.entries.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::State(format!("missing parameter `{name}`")))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(T::zero());
        }
    }

    /// Adds per-parameter gradient tensors, given in set order, into the
    /// gradient buffers.
    pub fn accumulate(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::shape("gradient list does not match parameter set"));
        }
        for (p, g) in self.entries.iter_mut().zip(grads) {
            if p.grad.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape mismatch for `{}`",
                    p.name
                )));
            }
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| ParamTensor {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Name of the first parameter holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|p| !p.value.all_finite())
            .map(|p| p.name.as_str())
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| lit(rng.random_range(-bound..bound)))
}

/// Inserts a dense `[d_out, d_in]` weight and zero `[d_out]` bias under
/// `{prefix}.{w_name}` / `{prefix}.{b_name}`.
pub(crate) fn insert_dense<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    w_name: String,
    b_name: String,
    d_in: usize,
    d_out: usize,
) -> Result<()> {
    params.insert(w_name, glorot(rng, &[d_out, d_in], d_in, d_out))?;
    params.insert(b_name, Tensor::zeros(&[d_out]))
}

/// Inserts a conv kernel `[k, k, d_in, d_out]` plus zero bias as
/// `{prefix}.w` and `{prefix}.b`.
pub(crate) fn insert_conv<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    prefix: &str,
    k: usize,
    d_in: usize,
    d_out: usize,
) -> Result<()> {
    let fan_in = k * k * d_in;
    let fan_out = k * k * d_out;
    params.insert(
        format!("{prefix}.w"),
        glorot(rng, &[k, k, d_in, d_out], fan_in, fan_out),
    )?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[d_out]))
}
