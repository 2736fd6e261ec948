//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{lit, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One update from the gradients stored in `params`.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (lit::<T>(cfg.beta1), lit::<T>(cfg.beta2));
    let one = T::one();
    let c1 = one - lit::<T>(cfg.beta1.powi(state.t as i32));
    let c2 = one - lit::<T>(cfg.beta2.powi(state.t as i32));
    let (lr, eps) = (lit::<T>(lr), lit::<T>(cfg.eps));
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "optimizer state for `{}` has the wrong shape",
                p.name
            )));
        }
        let it = p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, &g), (mi, vi)) in it {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
