use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Real;
use super::{AutodiffError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update. `grads[i]` of `None` counts as zero.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam",
            detail: format!("{} params, {} grads, {} moments", store.len(), grads.len(), state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let bc1 = T::of(1.0 - cfg.beta1.powf(t));
    let bc2 = T::of(1.0 - cfg.beta2.powf(t));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.eps);
    for (id, g) in grads.iter().enumerate() {
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        let data = p.tensor.data_mut();
        if let Some(g) = g {
            if g.len() != data.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    detail: format!("{}: grad {} vs param {}", p.name, g.len(), data.len()),
                });
            }
        }
        let (m, v) = (&mut state.m[id], &mut state.v[id]);
        for i in 0..data.len() {
            let gi = g.as_ref().map_or(T::zero(), |g| g[i]);
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
