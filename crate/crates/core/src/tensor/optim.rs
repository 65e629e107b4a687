use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::Result;

/// Per-parameter adaptive step sizes. `beta1 = 0` gives the momentum-free
/// second-moment variant; `beta1 > 0` is Adam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear learning-rate warmup length in steps (0 disables).
    pub warmup: usize,
}

impl AdaptiveConfig {
    pub fn momentum_free(lr: f64) -> Self {
        AdaptiveConfig {
            lr,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            warmup: 100,
        }
    }

    pub fn adam(lr: f64) -> Self {
        AdaptiveConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adaptive {
    cfg: AdaptiveConfig,
    step: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adaptive {
    pub fn new(cfg: AdaptiveConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0f64; t.numel()]).collect();
        Adaptive {
            cfg,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update from the accumulated grads of `trainable` tensors
    /// (all tensors when `None`), then clears those grads.
    pub fn step(&mut self, params: &mut ParamStore, trainable: Option<&dyn Fn(&str) -> bool>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let warm = if self.cfg.warmup > 0 {
            (self.step as f64 / self.cfg.warmup as f64).min(1.0)
        } else {
            1.0
        };
        let lr = self.cfg.lr * warm;
        let bc1 = if self.cfg.beta1 > 0.0 {
            1.0 - self.cfg.beta1.powi(t)
        } else {
            1.0
        };
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (idx, (name, tensor)) in params.iter_mut().enumerate() {
            if let Some(f) = trainable {
                if !f(name) {
                    continue;
                }
            }
            let Some(grad) = tensor.grad().map(<[f32]>::to_vec) else {
                continue;
            };
            if lr == 0.0 {
                tensor.zero_grad();
                continue;
            }
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i] as f64;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let num = if self.cfg.beta1 > 0.0 {
                    m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                    m[i] / bc1
                } else {
                    g
                };
                let denom = (v[i] / bc2).sqrt() + self.cfg.eps;
                data[i] = (data[i] as f64 - lr * num / denom) as f32;
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}
