//! Summary features `s = f(x)` fed to the conditional density estimator.

mod autocorr;
mod theory;
pub mod yulenet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use autocorr::{DEFAULT_LAGS, autocorr_features, autocovariance};
pub use theory::{Ar2AcfVariant, theoretical_autocorr_ar2, theoretical_autocorr_ma2};
pub use yulenet::{
    SecondPool, YuleNet, YuleNetConfig, closed_form_params, count_macs, count_params,
};

/// A finite feature vector of fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SummaryVector(Vec<f64>);

impl SummaryVector {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite summary {features:?}"
            )));
        }
        Ok(Self(features))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Fixed `[ln variance, r̂(1..5)]` features.
    Autocorr,
    /// Trainable convolutional extractor, learned jointly with the flow.
    Yulenet,
}

impl ExtractorKind {
    pub fn id(self) -> &'static str {
        match self {
            Self::Autocorr => "autocorr",
            Self::Yulenet => "yulenet",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autocorr" => Ok(Self::Autocorr),
            "yulenet" => Ok(Self::Yulenet),
            _ => Err(Error::InvalidArgument(format!(
                "unknown extractor `{s}` (expected autocorr or yulenet)"
            ))),
        }
    }
}

/// Per-feature z-scoring with statistics frozen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standard deviations below this are treated as a constant feature.
const MIN_STD: f64 = 1e-8;

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits to row-major `[rows, dim]` data; degenerate columns get std 1.
    pub fn fit(data: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot fit standardizer to {} values of width {dim}",
                data.len()
            )));
        }
        let rows = data.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / rows as f64).sqrt();
                if sd.is_finite() && sd > MIN_STD {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Shift and scale suited to [`Graph::affine_cols`](crate::nn::Graph::affine_cols).
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let shift = self.mean.iter().zip(&scale).map(|(m, k)| -m * k).collect();
        (shift, scale)
    }

    pub fn apply_in_place(&self, data: &mut [f64]) {
        for row in data.chunks_exact_mut(self.dim()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}
