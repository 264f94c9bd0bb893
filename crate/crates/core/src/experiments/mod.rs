//! Config-driven experiment runner: dataset export, training runs,
//! Wasserstein budget curves and posterior histograms.
//!
//! Every file written here is a pure function of the config and its seed,
//! except `timings.json`.

mod commands;
mod config;

pub use commands::*;
pub use config::ExperimentConfig;
