use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub name: String,
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub states: Vec<AdamState>,
}

impl Adam {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[(String, &Tensor)]) -> Self {
        let states = params
            .iter()
            .map(|(name, t)| AdamState {
                name: name.clone(),
                m: Tensor::zeros(t.rows(), t.cols()),
                v: Tensor::zeros(t.rows(), t.cols()),
            })
            .collect();
        Self {
            config,
            step: 0,
            states,
        }
    }

    /// One bias-corrected Adam update. Every gradient is checked before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<(), AutodiffError> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(AutodiffError::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.states.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.states) {
            if p.shape() != g.shape() || p.shape() != s.m.shape() {
                return Err(AutodiffError::Shape(format!("parameter `{}`", s.name)));
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient { param: s.name.clone() });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            let pd = p.data_mut();
            let md = s.m.data_mut();
            let vd = s.v.data_mut();
            for (i, gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
