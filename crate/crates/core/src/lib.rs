//! Simulation-based inference for univariate time series with learned
//! summary features.

pub mod error;
pub mod flow;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub mod experiments;
pub mod params;
pub mod reference;
pub mod simulators;
pub mod snpe;
pub mod summaries;
pub mod transport;
