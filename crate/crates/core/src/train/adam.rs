//! Adam with bias correction over named parameter tensors.

use super::{TrainConfig, TrainError};
use crate::model::ModelParams;
use std::collections::HashMap;

/// Optimizer state: first/second moment per parameter name, allocated
/// lazily on the first step that produces a gradient for that name.
/// Parameters that receive no gradient in a step are left untouched.
#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    /// Steps applied so far; bias correction uses `t + 1` within a step.
    t: u64,
    moments: HashMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamState {
    pub fn new(config: &TrainConfig) -> Self {
        AdamState {
            beta1: config.beta1 as f64,
            beta2: config.beta2 as f64,
            epsilon: config.epsilon as f64,
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Apply one update. `grads` pairs parameter names with dense gradients
    /// of the same element count; `step` is only used in error messages.
    pub fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &[(String, Vec<f32>)],
        lr: f32,
        step: usize,
    ) -> Result<(), TrainError> {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (name, grad) in grads {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGrad { name: name.clone(), step });
            }
            let tensor = params.get_mut(name)?;
            if tensor.numel() != grad.len() {
                return Err(TrainError::Config {
                    detail: format!(
                        "gradient for \"{name}\" has {} elements, parameter has {}",
                        grad.len(),
                        tensor.numel()
                    ),
                });
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let data = tensor.data_mut();
            for ((p, g), (m, v)) in
                data.iter_mut().zip(grad).zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = *g as f64;
                let m64 = self.beta1 * (*m as f64) + (1.0 - self.beta1) * g;
                let v64 = self.beta2 * (*v as f64) + (1.0 - self.beta2) * g * g;
                *m = m64 as f32;
                *v = v64 as f32;
                let update = (lr as f64) * (m64 / bc1) / ((v64 / bc2).sqrt() + self.epsilon);
                *p = (*p as f64 - update) as f32;
                if !p.is_finite() {
                    return Err(TrainError::NonFiniteParam { name: name.clone(), step });
                }
            }
        }
        Ok(())
    }
}
