//! Decoupled-weight-decay Adam with linear warmup/decay and global norm clipping.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::Params;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            warmup_ratio: 0.1,
            grad_clip: 2.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate at 1-based `step`: linear ramp over the warmup steps, then
/// linear decay to zero at `total`.
pub fn scheduled_lr(config: &OptimConfig, step: usize, total: usize) -> f64 {
    let total = total.max(1);
    let warmup = (config.warmup_ratio * total as f64).ceil() as usize;
    if step <= warmup && warmup > 0 {
        config.learning_rate * step as f64 / warmup as f64
    } else if total > warmup {
        config.learning_rate * (total.saturating_sub(step)) as f64 / (total - warmup) as f64
    } else {
        0.0
    }
}

pub struct AdamW<T> {
    pub config: OptimConfig,
    pub total_steps: usize,
    step: usize,
    first: Vec<ArrayD<T>>,
    second: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: OptimConfig, params: &Params<T>, total_steps: usize) -> Self {
        let zeros: Vec<ArrayD<T>> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
            .collect();
        Self {
            config,
            total_steps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Clips `grad` to the configured global norm and applies one update.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut Params<T>, grad: &mut Params<T>) -> f64 {
        let norm = grad.squared_norm().to_f64_lossy().sqrt();
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            grad.scale(T::of(self.config.grad_clip / norm));
        }
        self.step += 1;
        let lr = scheduled_lr(&self.config, self.step, self.total_steps);
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr_t, wd, eps) = (T::of(lr), T::of(c.weight_decay), T::of(c.eps));
        let (bc1, bc2) = (T::of(bias1), T::of(bias2));
        for ((((name, mut p), (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let decay = p.ndim() == 2 && !name.ends_with("_emb");
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    let decay_term = if decay { wd * *p } else { T::zero() };
                    *p -= lr_t * (update + decay_term);
                });
        }
        norm
    }
}
