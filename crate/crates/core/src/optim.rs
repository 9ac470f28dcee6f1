//! AdamW with decoupled weight decay.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// First/second moment buffers, keyed like the parameter store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

/// Rank-1 tensors (biases and layer-norm gains/offsets) are not decayed.
pub fn decays(param: &Tensor) -> bool {
    param.rank() >= 2
}

impl AdamW {
    pub fn new() -> AdamW {
        AdamW::default()
    }

    /// One update from the gradients currently held in `params`:
    ///
    /// ```text
    /// m ← β₁m + (1−β₁)g          v ← β₂v + (1−β₂)g²
    /// θ ← θ − lr·( m̂/(√v̂ + ε) + λθ )
    /// ```
    ///
    /// `ready` must be false until a backward pass has populated gradients.
    pub fn step(&mut self, params: &mut ParamStore, cfg: &AdamWConfig, ready: bool) -> Result<()> {
        if !ready {
            return Err(Error::State("optimizer step before backward".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, theta, grad) in params.iter_with_grads_mut() {
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(theta.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(theta.shape()));
            let wd = if decays(theta) { cfg.weight_decay } else { 0.0 };
            let iter = theta
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (mi, vi)) in iter {
                let g = g as f64;
                let mn = cfg.beta1 * *mi as f64 + (1.0 - cfg.beta1) * g;
                let vn = cfg.beta2 * *vi as f64 + (1.0 - cfg.beta2) * g * g;
                *mi = mn as f32;
                *vi = vn as f32;
                let m_hat = mn / bc1;
                let v_hat = vn / bc2;
                let pv = *p as f64;
                *p = (pv - cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + wd * pv)) as f32;
            }
        }
        Ok(())
    }
}
