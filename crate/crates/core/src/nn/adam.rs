use serde::{Deserialize, Serialize};

use super::mlp::{MlpNet, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Parameters,
    pub second_moment: Parameters,
}

impl AdamState {
    pub fn new(net: &MlpNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Parameters::zeros_like(net.params()),
            second_moment: Parameters::zeros_like(net.params()),
        }
    }

    /// One bias-corrected Adam update of `net` with `grads`.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Parameters) -> Result<()> {
        if !net.params().same_shape(grads) || !net.params().same_shape(&self.first_moment) {
            return Err(Error::Shape("adam step: gradient or state shape differs from net".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam step gradients".into()));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        let params = net.params_mut().slices_mut();
        let m = self.first_moment.slices_mut();
        let v = self.second_moment.slices_mut();
        let g = grads.slices();
        for (((p, m), v), g) in params.zip(m).zip(v).zip(g) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
