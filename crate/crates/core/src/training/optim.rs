//! AdamW with decoupled weight decay and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{EfaError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Moment estimates, aligned with a [`ParamStore`] by position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamWState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols())).collect::<Vec<_>>();
        Self { t: 0, m: zeros(), v: zeros() }
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        let ok = self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, p), (m, v))| m.shape() == p.value.shape() && v.shape() == p.value.shape());
        if ok {
            Ok(())
        } else {
            Err(EfaError::Shape("optimizer state does not match the parameters".into()))
        }
    }
}

/// Global L2 norm over every gradient present.
pub fn global_norm(grads: &Gradients, store: &ParamStore) -> f64 {
    store.ids().filter_map(|id| grads.get(id)).map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescale so the global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, store: &ParamStore, max_norm: f64) -> f64 {
    let norm = global_norm(grads, store);
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One AdamW update at learning rate `lr`. Missing gradients count as zero.
/// Weight decay applies only to parameters registered with `decay`.
pub fn adamw_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamWState, config: &AdamWConfig, lr: f64) -> Result<()> {
    state.check(store)?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let decay = store.get(id).decay;
        let grad = grads.get(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = store.value_mut(id);
        for k in 0..p.len() {
            let gk = grad.map_or(0.0, |g| g.as_slice()[k]);
            let mk = &mut m.as_mut_slice()[k];
            let vk = &mut v.as_mut_slice()[k];
            *mk = config.beta1 * *mk + (1.0 - config.beta1) * gk;
            *vk = config.beta2 * *vk + (1.0 - config.beta2) * gk * gk;
            let update = (*mk / c1) / ((*vk / c2).sqrt() + config.eps);
            let w = &mut p.as_mut_slice()[k];
            let wd = if decay { config.weight_decay * *w } else { 0.0 };
            *w -= lr * (update + wd);
        }
    }
    Ok(())
}
