use serde::{Deserialize, Serialize};

use super::{quantize, Gradients, Parameterized};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("adam: {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<M: Parameterized + ?Sized>(model: &M, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Ok(Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    /// Applies one update to every trainable tensor of `model`.
    ///
    /// Frozen tensors and their moments are left untouched. Updated values
    /// are rounded to single precision.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M, grads: &Gradients) -> Result<()> {
        let mut tensors = model.tensors_mut();
        check_dim(self.first.len(), tensors.len())?;
        check_dim(tensors.len(), grads.tensors.len())?;
        for ((t, g), m) in tensors.iter().zip(&grads.tensors).zip(&self.first) {
            if t.data.len() != g.len() || t.data.len() != m.len() {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    expected: vec![t.data.len()],
                    got: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (((t, g), m), v) in tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if !t.trainable {
                continue;
            }
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                t.data[i] = quantize(t.data[i] - lr * m_hat / (v_hat.sqrt() + epsilon));
            }
        }
        Ok(())
    }
}
