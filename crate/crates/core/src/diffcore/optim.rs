//! Gradient clipping and first-order optimizers.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::Real;
use crate::error::{ensure, Result};

/// Global L2 norm over a list of gradient arrays.
pub fn global_norm<T: Real>(grads: &[Array2<T>]) -> T {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(T::zero(), |a, &x| a + x * x)
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Array2<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm && norm > T::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// `v ← αv + (1-α)g²; θ ← θ - lr·g/(√v + eps)`
    RmsProp { alpha: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::RmsProp {
            alpha: 0.99,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    lr: T,
    square_avg: Vec<Array2<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, lr: f64, params: &ParamSet<T>) -> Self {
        Optimizer {
            config,
            lr: T::from_f64(lr).expect("lr"),
            square_avg: params.iter().map(|p| Array2::zeros(p.value().raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Array2<T>]) -> Result<()> {
        ensure!(grads.len() == params.len(), Contract, "optimizer: {} grads for {} params", grads.len(), params.len());
        let lr = self.lr;
        match self.config {
            OptimizerConfig::Sgd => {
                for (p, g) in params.values_mut().zip(grads) {
                    Zip::from(p).and(g).for_each(|p, &g| *p -= lr * g);
                }
            }
            OptimizerConfig::RmsProp { alpha, eps } => {
                let alpha = T::from_f64(alpha).expect("alpha");
                let eps = T::from_f64(eps).expect("eps");
                for ((p, g), v) in params.values_mut().zip(grads).zip(&mut self.square_avg) {
                    Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
                        *v = alpha * *v + (T::one() - alpha) * g * g;
                        *p -= lr * g / (v.sqrt() + eps);
                    });
                }
            }
        }
        Ok(())
    }
}
