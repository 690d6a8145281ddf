use serde::{Deserialize, Serialize};

use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
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

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let first: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates, one per tracked tensor.
    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.first, &self.second)
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(config: AdamConfig, first: Vec<Matrix>, second: Vec<Matrix>, step: u64) -> Result<Self> {
        let shapes_match = first.len() == second.len() && first.iter().zip(&second).all(|(a, b)| a.shape() == b.shape());
        if !shapes_match {
            return Err(AfrError::dim("AdamState", "first and second moments disagree in shape"));
        }
        Ok(Self {
            config,
            first,
            second,
            step,
        })
    }

    /// One bias-corrected Adam update in place. Gradients are checked for
    /// finiteness before anything is modified.
    pub fn update<'a, 'b>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Matrix>,
        grads: impl IntoIterator<Item = &'b Matrix>,
    ) -> Result<()> {
        let params: Vec<&mut Matrix> = params.into_iter().collect();
        let grads: Vec<&Matrix> = grads.into_iter().collect();
        let next = self.step + 1;
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(AfrError::dim(
                "adam_step",
                format!(
                    "state tracks {} tensors, got {} params and {} grads",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != self.first[i].shape() {
                return Err(AfrError::dim(
                    "adam_step",
                    format!(
                        "tensor {i}: state {:?}, param {:?}, grad {:?}",
                        self.first[i].shape(),
                        p.shape(),
                        g.shape()
                    ),
                ));
            }
            if !g.all_finite() {
                return Err(AfrError::Training {
                    step: next,
                    reason: format!("non-finite gradient in tensor {i}"),
                });
            }
        }

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step = next;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
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
