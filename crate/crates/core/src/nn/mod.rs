//! Neural-network building blocks: autodiff graph, parameter storage, Adam,
//! and weight initialization.

mod adam;
pub mod gradcheck;
mod graph;
mod kernels;
mod store;

pub use adam::Adam;
pub use graph::{Bound, Graph, Var};
pub use store::{FORMAT_VERSION, MAGIC, ParamEntry, ParamId, ParameterStore};

use rand::Rng;

/// Kaiming-uniform initialization for a ReLU layer with the given fan-in:
/// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Bias initialization matching common practice: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}
