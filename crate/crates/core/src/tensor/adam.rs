//! Adam optimizer with bias correction.

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            learning_rate: lr,
            ..Default::default()
        }
    }
}

/// Moment state is kept per parameter, aligned by position in the parameter
/// list, which must therefore be stable across steps.
pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Adjust the learning rate (for schedules); moments are untouched.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    /// Apply one update using each parameter's accumulated gradient, then
    /// clear the gradients. Parameters without a gradient this step still
    /// decay their moments (treated as zero gradient).
    pub fn step(&mut self, params: &[Tensor<T>]) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![T::ZERO; p.numel()], vec![T::ZERO; p.numel()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter list changed");
        self.step += 1;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_m_b1 = T::ONE - b1;
        let one_m_b2 = T::ONE - b2;
        let eps = T::from_f64(self.cfg.epsilon);
        let bias1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        // lr * sqrt(1-b2^t)/(1-b1^t) folds both corrections into one factor
        let lr_t = T::from_f64(self.cfg.learning_rate * bias2.sqrt() / bias1);

        for (param, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let grad = param.take_grad();
            let mut data = param.to_vec();
            match grad {
                Some(g) => {
                    for i in 0..data.len() {
                        m[i] = b1 * m[i] + one_m_b1 * g[i];
                        v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
                        data[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
                    }
                }
                None => {
                    for i in 0..data.len() {
                        m[i] = b1 * m[i];
                        v[i] = b2 * v[i];
                        data[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
                    }
                }
            }
            param.set_data(data);
        }
    }
}
