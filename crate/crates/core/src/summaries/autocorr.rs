use crate::error::{Error, Result};

/// Lags used by the default autocorrelation extractor (output length 5).
pub const DEFAULT_LAGS: usize = 5;

/// Biased sample autocovariances `ĉ(0..=max_lag)` with
/// `ĉ(s) = (1/n) Σ (x(n) − x̄)(x(n−s) − x̄)`.
pub fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|s| {
            if s >= n {
                return 0.0;
            }
            centered[s..]
                .iter()
                .zip(&centered)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// `[ln ĉ(0), r̂(1), …, r̂(n_lags − 1)]` with `r̂(s) = ĉ(s) / ĉ(0)`.
pub fn autocorr_features(x: &[f64], n_lags: usize) -> Result<Vec<f64>> {
    if n_lags == 0 {
        return Err(Error::InvalidArgument("n_lags must be positive".into()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "series too short for autocorrelation".into(),
        ));
    }
    let c = autocovariance(x, n_lags - 1);
    if !(c[0] > 0.0) {
        return Err(Error::InvalidArgument(
            "series has zero variance; autocorrelation is undefined".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_lags);
    out.push(c[0].ln());
    out.extend(c[1..].iter().map(|v| v / c[0]));
    Ok(out)
}
