//! Parameter vectors and uniform box priors.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parameter vector θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint(pub Vec<f64>);

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite parameter {coords:?}"
            )));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<[f64; 2]> for ParamPoint {
    fn from(v: [f64; 2]) -> Self {
        Self(v.to_vec())
    }
}

impl std::ops::Index<usize> for ParamPoint {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Uniform prior on the open box `∏ (lower[i], upper[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl fmt::Display for BoxPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| format!("({l}, {u})"))
            .collect();
        write!(f, "{}", parts.join(" × "))
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl BoxPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "prior bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidArgument(format!(
                    "prior dimension {i}: lower {l} must be below upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Strict interior test; boundary points are outside.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t > *l && *t < *u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint {
        let coords = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                loop {
                    let t = l + (u - l) * rng.random::<f64>();
                    // random::<f64>() lies in [0, 1); reject the closed lower edge
                    if t > l && t < u {
                        break t;
                    }
                }
            })
            .collect();
        ParamPoint(coords)
    }

    /// `-log(volume)` inside the open box, `-∞` elsewhere.
    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.volume().ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Affine map of the box onto the unit cube.
    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| (t - l) / (u - l))
            .collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| l + t * (u - l))
            .collect()
    }

    /// Scaled-logit map from the open box to ℝᵈ.
    pub fn unconstrain(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if !self.contains(theta) {
            return Err(Error::OutOfSupport {
                theta: theta.to_vec(),
                support: self.to_string(),
            });
        }
        Ok(self
            .to_unit(theta)
            .into_iter()
            .map(|t| t.ln() - (-t).ln_1p())
            .collect())
    }

    /// Inverse of [`unconstrain`](Self::unconstrain). Very large |u| saturate
    /// onto the boundary, which callers treat as outside the support.
    pub fn constrain(&self, u: &[f64]) -> Vec<f64> {
        let unit: Vec<f64> = u.iter().map(|&v| sigmoid(v)).collect();
        self.from_unit(&unit)
    }

    /// `log |det ∂u/∂θ|` of the unconstraining map at θ, so that
    /// `log q_θ(θ) = log q_u(u(θ)) + log_det_unconstrain(θ)`.
    pub fn log_det_unconstrain(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| {
                let w = u - l;
                let s = (t - l) / w;
                -(w.ln() + s.ln() + (-s).ln_1p())
            })
            .sum()
    }
}
