//! Closed-form autocorrelations of the two linear models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulators::{ar2_coefficients, ma2_coefficients};

/// Which closed form to use for the bimodal AR(2) lags 1 and 2.
///
/// The two agree whenever `k2 ≥ 0`. For `k2 < 0` only [`YuleWalker`]
/// matches the simulator: the literal form evaluates `k1 + k1·|k2|` where
/// the recursion has `k1 + k1·k2`, giving `r(1) = 3.5` at `(0.5, −0.75)`.
///
/// [`YuleWalker`]: Ar2AcfVariant::YuleWalker
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ar2AcfVariant {
    /// `r(1) = (k1 + k1|k2|) / (1 − |k2|)`, `r(2) = |k2| + (k1 + k1|k2|)² / (1 − |k2|)`.
    AppendixLiteral,
    /// `r(1) = a1 / (1 − a2)`, `r(2) = a1 r(1) + a2`.
    YuleWalker,
}

/// `r(1), …, r(max_lag)`; lags beyond 2 follow `r(s) = a1 r(s−1) + a2 r(s−2)`.
pub fn theoretical_autocorr_ar2(
    theta: &[f64],
    max_lag: usize,
    variant: Ar2AcfVariant,
) -> Result<Vec<f64>> {
    let &[k1, k2] = theta else {
        return Err(Error::InvalidArgument(format!(
            "expected 2 parameters, got {}",
            theta.len()
        )));
    };
    if k2.abs() >= 1.0 || k1.abs() >= 1.0 {
        return Err(Error::OutOfSupport {
            theta: theta.to_vec(),
            support: "(-1, 1)² (|k2| = 1 is singular)".into(),
        });
    }
    let (a1, a2) = ar2_coefficients(k1, k2);
    let (r1, r2) = match variant {
        Ar2AcfVariant::AppendixLiteral => {
            let c = k1 + k1 * k2.abs();
            (c / (1.0 - k2.abs()), k2.abs() + c * c / (1.0 - k2.abs()))
        }
        Ar2AcfVariant::YuleWalker => {
            let r1 = a1 / (1.0 - a2);
            (r1, a1 * r1 + a2)
        }
    };
    let mut r = Vec::with_capacity(max_lag);
    for s in 1..=max_lag {
        let v = match s {
            1 => r1,
            2 => r2,
            _ => a1 * r[s - 2] + a2 * r[s - 3],
        };
        r.push(v);
    }
    Ok(r)
}

/// `r(1), …, r(max_lag)` for MA(2); zero beyond lag 2.
pub fn theoretical_autocorr_ma2(theta: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let &[k1, k2] = theta else {
        return Err(Error::InvalidArgument(format!(
            "expected 2 parameters, got {}",
            theta.len()
        )));
    };
    let (b1, b2) = ma2_coefficients(k1, k2);
    let g0 = 1.0 + b1 * b1 + b2 * b2;
    Ok((1..=max_lag)
        .map(|s| match s {
            1 => b1 * (1.0 + k2) / g0,
            2 => k2 / g0,
            _ => 0.0,
        })
        .collect())
}
