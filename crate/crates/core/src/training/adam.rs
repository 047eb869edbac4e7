//! Adam with bias correction and decoupled weight decay, operating on the
//! crate's dense matrices. One [`AdamSlot`] holds the shared step counter;
//! moments live with the caller so they can be checkpointed alongside the
//! parameters they mirror.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled: applied as a multiplicative shrink after the update.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Step counter shared by every tensor updated in one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdamSlot {
    pub step: u64,
}

impl AdamSlot {
    pub fn new() -> Self {
        AdamSlot { step: 0 }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One Adam update for a single tensor. Empty tensors are skipped so
    /// absent encoder variants cost nothing. A tensor whose gradient is
    /// identically zero is left untouched (moments included): an objective
    /// that does not reach a parameter group cannot move it through stale
    /// momentum. Decoupled decay still applies when configured.
    pub fn apply(
        &self,
        cfg: &AdamParams,
        param: &mut Mat,
        grad: &Mat,
        m: &mut Mat,
        v: &mut Mat,
    ) -> Result<()> {
        if param.rows() == 0 || param.cols() == 0 {
            return Ok(());
        }
        debug_assert!(self.step > 0, "begin_step must run before apply");
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let g = grad.as_slice();
        if g.iter().any(|&x| x != 0.0) {
            let t = self.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let p = param.as_mut_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        if cfg.weight_decay > 0.0 {
            let shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
            for x in param.as_mut_slice() {
                *x *= shrink;
            }
        }
        Ok(())
    }
}
