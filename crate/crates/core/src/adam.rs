use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Adam hyperparameters. Defaults are the usual `1e-3 / 0.9 / 0.999 / 1e-8`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based), in place.
pub fn adam_step<T: Scalar>(
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut AdamState<T>,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.shape() != params.shape()
        || state.m.shape() != params.shape()
        || state.v.shape() != params.shape()
    {
        return Err(Error::shape(format!(
            "adam: params {:?}, grads {:?}, moments {:?}/{:?}",
            params.shape(),
            grads.shape(),
            state.m.shape(),
            state.v.shape()
        )));
    }
    if t == 0 {
        return Err(Error::Config("adam step index starts at 1".into()));
    }
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);

    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in params.data_mut().iter_mut().zip(grads.data()).enumerate() {
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
