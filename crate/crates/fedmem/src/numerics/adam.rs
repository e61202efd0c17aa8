//! Adam optimiser with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;

/// Optimiser hyperparameters. The moment decays and epsilon default to the
/// customary 0.9 / 0.999 / 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn new(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moment accumulators plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    /// Fresh state sized for `like`, with zero moments.
    pub fn new(like: &ParamSet) -> Self {
        let n = like.num_params();
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update in place:
    ///
    /// ```text
    /// m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g^2
    /// w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    /// ```
    ///
    /// Rejects gradients containing non-finite values without touching any
    /// state.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, hp: &AdamParams) -> Result<()> {
        grads.check_finite("optimiser step")?;
        let g = grads.flatten();
        if g.len() != self.m.len() {
            return Err(Error::Dimension {
                context: "optimiser state size".into(),
                expected: self.m.len(),
                actual: g.len(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - hp.beta1.powi(self.t as i32);
        let c2 = 1.0 - hp.beta2.powi(self.t as i32);
        let mut w = params.flatten();
        for i in 0..g.len() {
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g[i];
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            w[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
        params.unflatten_from(&w)?;
        params.check_finite("optimiser step")
    }
}
