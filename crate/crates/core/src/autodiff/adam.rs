use ndarray::{Array2, Zip};

use super::params::{ParamId, ParamStore};
use crate::Matrix;

/// Default learning rate for unsupervised training.
pub const DEFAULT_LR: f64 = 3e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moments for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let m = params
            .iter()
            .map(|&id| Array2::zeros(store.value(id).raw_dim()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Self {
            config,
            params,
            m,
            v,
            step: 0,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to every parameter of the group
    /// and zeroes their gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, &id) in self.params.iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id);
            Zip::from(value)
                .and(&mut *grad)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .for_each(|p, g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * *g;
                    *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    *g = 0.0;
                });
        }
    }
}

pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) {
    state.step(store);
}
