//! Adam with decoupled weight decay and the stepped learning-rate schedule.

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Moments are allocated to match the store's current parameters.
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let m = store.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        let v = store.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            m,
            v,
        }
    }

    /// Applies one update from `grads` (store order). Decay is decoupled:
    /// the adaptive step uses the raw gradient and the decay term is applied
    /// directly to the parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} grads for {} params", grads.len(), store.len()),
            ));
        }
        for (gi, grad) in grads.iter().enumerate() {
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite gradient for parameter '{}'",
                    store.entries()[gi].name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let p = store.entries_mut()[i].tensor.data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                p[j] -= self.learning_rate * self.weight_decay * p[j];
            }
        }
        Ok(())
    }
}

/// Stepped decay: factor 0.95 every 5 epochs, epochs counted from 0
/// (epochs 0-4 run at the initial rate, 5-9 at 0.95x, and so on).
pub fn lr_for_epoch(initial: f64, epoch: usize) -> f64 {
    initial * 0.95f64.powi((epoch / 5) as i32)
}
