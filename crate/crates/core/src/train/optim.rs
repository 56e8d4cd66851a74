//! Adam with decoupled weight decay and the linear warmup/decay schedule.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::{tensor_schema, Gradients, ModelParameters};

use super::TrainError;

/// Optimization hyperparameters. The defaults are the tuned system values;
/// small from-scratch models typically need a larger learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of total steps spent warming up.
    pub warmup_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 1e-4,
            warmup_rate: 0.1,
            batch_size: 32,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.warmup_rate) {
            return fail(format!("warmup_rate {} outside [0, 1]", self.warmup_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return fail("epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_rate * total_steps as f64).round() as usize
    }
}

/// Piecewise-linear schedule: 0 at step 0, `peak` at `warmup_steps`, back
/// to 0 at `total_steps`. A zero warmup starts directly at `peak`.
pub fn learning_rate_at(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> f64 {
    if total_steps == 0 {
        return peak;
    }
    let step = step.min(total_steps);
    if step <= warmup_steps {
        if warmup_steps == 0 {
            peak
        } else {
            peak * step as f64 / warmup_steps as f64
        }
    } else {
        peak * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    }
}

/// Adam state over the model's tensor schema. Weight decay is decoupled
/// and skips biases and layer-norm parameters.
pub struct Adam {
    config: OptimizerConfig,
    decay_mask: Vec<bool>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    steps: usize,
}

impl Adam {
    pub fn new(params: &ModelParameters, config: OptimizerConfig) -> Self {
        let decay_mask = tensor_schema(&params.config)
            .iter()
            .map(|spec| spec.decay)
            .collect();
        let zeros: Vec<Array2<f64>> = params
            .tensors
            .iter()
            .map(|t| Array2::zeros(t.raw_dim()))
            .collect();
        Self {
            config,
            decay_mask,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One update with the given (already scheduled) learning rate. The
    /// parameters are rounded through f32 afterwards so checkpoints stay
    /// bit-exact images of the in-memory model.
    pub fn step(&mut self, params: &mut ModelParameters, grads: &Gradients, lr: f64) {
        self.steps += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let eps = self.config.epsilon;
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            let decay = if self.decay_mask[i] {
                self.config.weight_decay
            } else {
                0.0
            };
            let g = &grads.tensors[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(tensor)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * *p);
                });
        }
        params.round_to_f32();
    }
}
