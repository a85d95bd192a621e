//! Parameter updates: plain gradient descent and bias-corrected Adam.
//!
//! Both operate in place and treat the learned initial state like any other
//! tensor.

use crate::bptt::Gradients;
use crate::model::{ModelConfig, Parameters};
use crate::numerics::Real;

/// `w ← w − η·∇w` for every scalar.
pub fn sgd_step<T: Real>(params: &mut Parameters<T>, grads: &Gradients<T>, learning_rate: T) {
    params.zip_apply(grads, |w, g| *w = *w - learning_rate * g);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// First-moment estimates.
    pub m: Parameters<T>,
    /// Second-moment estimates.
    pub v: Parameters<T>,
    /// Number of completed steps.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(cfg: &ModelConfig, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Parameters::zeros(cfg),
            v: Parameters::zeros(cfg),
            t: 0,
        }
    }
}

pub fn adam_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) {
    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let one = T::one();
    // Bias corrections folded into the step size.
    let correction1 = one - b1.powi(t);
    let correction2 = one - b2.powi(t);
    let lr = T::from_f64_lossy(c.learning_rate);
    let eps = T::from_f64_lossy(c.epsilon);

    let params_t = params.tensors_mut();
    let m_t = state.m.tensors_mut();
    let v_t = state.v.tensors_mut();
    let g_t = grads.tensors();
    for (((w, m), v), g) in params_t.into_iter().zip(m_t).zip(v_t).zip(g_t) {
        for k in 0..w.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            w[k] = w[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
