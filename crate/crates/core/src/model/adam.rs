use ndarray::{Array2, Zip};

use super::{Gradients, ModelParams};
use crate::error::{Error, Result};

/// Adam with bias-corrected moments, one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to every gradient (0 disables it).
    pub weight_decay: f64,
    pub(crate) step: u64,
    pub(crate) m: Vec<Array2<f64>>,
    pub(crate) v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Array2::zeros(t.value.raw_dim()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update `θ ← θ − lr · m̂ / (sqrt(v̂) + ε)`.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.tensors().len() != params.tensors().len() || self.m.len() != params.tensors().len() {
            return Err(Error::Shape("gradient/optimizer layout does not match the model".into()));
        }
        for (k, (g, t)) in grads.tensors().iter().zip(params.tensors()).enumerate() {
            if g.dim() != t.value.dim() || self.m[k].dim() != t.value.dim() {
                return Err(Error::Shape(format!("tensor {} has mismatched gradient shape", t.name)));
            }
        }
        if let Some(k) = grads.first_non_finite() {
            return Err(Error::Shape(format!(
                "non-finite gradient in tensor {}",
                params.tensors()[k].name
            )));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2_sqrt = (1.0 - self.beta2.powi(t)).sqrt();
        let step_size = lr / bc1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);

        for ((tensor, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(&mut tensor.value)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
                });
        }
        Ok(())
    }
}
