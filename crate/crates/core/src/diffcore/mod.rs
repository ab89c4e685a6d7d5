//! Minimal reverse-mode differentiation and the network blocks built on it.
//!
//! Everything is generic over [`Real`]: training runs in `f32`, gradient
//! checks run in `f64`.

pub mod functional;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use functional::{
    cosine_rows, gaussian_sample, gaussian_sample_graph, kl_diag_gaussians, kl_diag_gaussians_graph, one_hot_rows,
    positive_std, softmax,
};
pub use graph::{Binding, Gradients, Graph, Var};
pub use layers::{Activation, Attended, Attention, Dense, GruCell, Mlp};
pub use optim::{clip_global_norm, global_norm, Optimizer, OptimizerConfig};
pub use params::{Param, ParamId, ParamSet};

/// Floating-point element type of every tensor.
pub trait Real: ndarray::NdFloat + num_traits::FromPrimitive {}

impl<T: ndarray::NdFloat + num_traits::FromPrimitive> Real for T {}

/// Converts an `f64` constant into `T`.
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// Floor added after softplus so every standard deviation stays positive.
pub const STD_FLOOR: f64 = 1e-3;
