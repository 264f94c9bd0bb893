//! Seeded simulators for the three benchmark models.
//!
//! * bimodal AR(2): `x(n) = (k1 + k1·k2) x(n−1) + |k2| x(n−2) + u(n)`
//! * MA(2): `x(n) = u(n) + (k1 + k1·k2) u(n−1) + k2 u(n−2)`
//! * stochastic Van der Pol: `ẍ = ε(1 − x²)ẋ − x + σẇ`, Euler–Maruyama,
//!   observed every `out_period` seconds.
//!
//! All noise is standard normal drawn from the caller's [`RngStream`].

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterStore;
use crate::params::{BoxPrior, ParamPoint};
use crate::rng::{self, RngStream};

/// Samples discarded before the AR(2) output window starts.
pub const AR2_BURN_IN: usize = 1000;
/// Oscillator integration step (s).
pub const VDP_DT: f64 = 0.01;
/// Oscillator observation period (s).
pub const VDP_PERIOD: f64 = 0.05;
/// Oscillator initial condition `(x(0), ẋ(0))`.
pub const VDP_INIT: (f64, f64) = (1.0, 2.0);
/// Any output magnitude beyond this marks a diverged run.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "bimodal-ar2")]
    BimodalAr2,
    #[serde(rename = "ma2")]
    Ma2,
    #[serde(rename = "vdp")]
    VanDerPol,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::BimodalAr2, Model::Ma2, Model::VanDerPol];

    pub fn id(self) -> &'static str {
        match self {
            Model::BimodalAr2 => "bimodal-ar2",
            Model::Ma2 => "ma2",
            Model::VanDerPol => "vdp",
        }
    }

    pub fn default_prior(self) -> BoxPrior {
        let (lo, hi) = match self {
            Model::BimodalAr2 | Model::Ma2 => (vec![-1.0, -1.0], vec![1.0, 1.0]),
            Model::VanDerPol => (vec![0.0, 0.0], vec![5.0, 2.0]),
        };
        BoxPrior::new(lo, hi).expect("static prior is valid")
    }

    /// Ground-truth parameters of the benchmark studies.
    pub fn ground_truths(self) -> Vec<ParamPoint> {
        match self {
            Model::BimodalAr2 | Model::Ma2 => vec![[0.5, -0.75].into()],
            Model::VanDerPol => vec![
                [2.5, 1.0].into(),
                [1.0, 0.5].into(),
                [1.0, 1.5].into(),
                [4.0, 1.5].into(),
                [4.0, 0.5].into(),
            ],
        }
    }

    pub fn sample_period(self) -> f64 {
        match self {
            Model::BimodalAr2 | Model::Ma2 => 1.0,
            Model::VanDerPol => VDP_PERIOD,
        }
    }

    pub fn has_reference(self) -> bool {
        !matches!(self, Model::VanDerPol)
    }

    /// Runs the model with its default settings. `Ok(None)` marks a diverged
    /// (non-finite or unbounded) run that the caller should resample.
    pub fn simulate<R: Rng + ?Sized>(
        self,
        theta: &[f64],
        n_s: usize,
        rng: &mut R,
    ) -> Result<Option<TimeSeries>> {
        match self {
            Model::BimodalAr2 => simulate_bimodal_ar2(theta, n_s, rng),
            Model::Ma2 => simulate_ma2(theta, n_s, rng),
            Model::VanDerPol => simulate_vdp(theta, n_s, &VdpSettings::default(), rng),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model id `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: Model,
    pub theta: Vec<f64>,
}

/// A fixed-length simulator output.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    pub sample_period: f64,
    pub provenance: Option<Provenance>,
}

impl TimeSeries {
    /// Wraps raw values; every value must be finite.
    pub fn new(values: Vec<f64>, sample_period: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty time series".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            values,
            sample_period,
            provenance: None,
        })
    }

    fn checked(values: Vec<f64>, sample_period: f64, model: Model, theta: &[f64]) -> Option<Self> {
        if values
            .iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
        {
            return None;
        }
        Some(Self {
            values,
            sample_period,
            provenance: Some(Provenance {
                model,
                theta: theta.to_vec(),
            }),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 * self.sample_period
    }
}

fn check_pair(theta: &[f64], open_unit: bool) -> Result<(f64, f64)> {
    let &[a, b] = theta else {
        return Err(Error::InvalidArgument(format!(
            "expected 2 parameters, got {}",
            theta.len()
        )));
    };
    let ok = if open_unit {
        a.abs() < 1.0 && b.abs() < 1.0
    } else {
        a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()
    };
    if !ok {
        let support = if open_unit { "(-1, 1)²" } else { "(0, ∞)²" };
        return Err(Error::OutOfSupport {
            theta: theta.to_vec(),
            support: support.into(),
        });
    }
    Ok((a, b))
}

/// AR coefficients `(a1, a2) = (k1 + k1·k2, |k2|)`.
pub fn ar2_coefficients(k1: f64, k2: f64) -> (f64, f64) {
    (k1 + k1 * k2, k2.abs())
}

/// MA coefficients `(b1, b2) = (k1 + k1·k2, k2)`.
pub fn ma2_coefficients(k1: f64, k2: f64) -> (f64, f64) {
    (k1 + k1 * k2, k2)
}

/// The other `(k1, k2)` giving the same AR coefficients (flips the sign of k2).
pub fn ar2_mirror(k1: f64, k2: f64) -> (f64, f64) {
    let (a1, _) = ar2_coefficients(k1, k2);
    let k2m = -k2;
    (a1 / (1.0 + k2m), k2m)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn simulate_bimodal_ar2<R: Rng + ?Sized>(
    theta: &[f64],
    n_s: usize,
    rng: &mut R,
) -> Result<Option<TimeSeries>> {
    let (k1, k2) = check_pair(theta, true)?;
    if n_s == 0 {
        return Err(Error::InvalidArgument("n_s must be positive".into()));
    }
    let (a1, a2) = ar2_coefficients(k1, k2);
    let (mut prev2, mut prev1) = (0.0, 0.0);
    let mut values = Vec::with_capacity(n_s);
    for n in 0..AR2_BURN_IN + n_s {
        let x = a1 * prev1 + a2 * prev2 + normal(rng);
        prev2 = prev1;
        prev1 = x;
        if n >= AR2_BURN_IN {
            values.push(x);
        }
    }
    Ok(TimeSeries::checked(values, 1.0, Model::BimodalAr2, theta))
}

pub fn simulate_ma2<R: Rng + ?Sized>(
    theta: &[f64],
    n_s: usize,
    rng: &mut R,
) -> Result<Option<TimeSeries>> {
    let (k1, k2) = check_pair(theta, true)?;
    if n_s == 0 {
        return Err(Error::InvalidArgument("n_s must be positive".into()));
    }
    let (b1, b2) = ma2_coefficients(k1, k2);
    let mut u2 = normal(rng);
    let mut u1 = normal(rng);
    let values = (0..n_s)
        .map(|_| {
            let u = normal(rng);
            let x = u + b1 * u1 + b2 * u2;
            u2 = u1;
            u1 = u;
            x
        })
        .collect();
    Ok(TimeSeries::checked(values, 1.0, Model::Ma2, theta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdpSettings {
    pub dt: f64,
    pub out_period: f64,
    pub init: (f64, f64),
}

impl Default for VdpSettings {
    fn default() -> Self {
        Self {
            dt: VDP_DT,
            out_period: VDP_PERIOD,
            init: VDP_INIT,
        }
    }
}

impl VdpSettings {
    /// Fine steps per observation, if `out_period / dt` is a positive integer.
    pub fn steps_per_sample(&self) -> Result<usize> {
        let ratio = self.out_period / self.dt;
        let r = ratio.round();
        if !(r >= 1.0 && (ratio - r).abs() < 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "out_period/dt = {ratio} is not a positive integer"
            )));
        }
        Ok(r as usize)
    }
}

/// Euler–Maruyama integration of the stochastic Van der Pol oscillator with
/// state `(x, v = ẋ)`; `θ = (ε, σ)`. Emits `x` after every
/// `out_period / dt` steps, `n_s` times. `σ = 0` and `ε = 0` are accepted
/// as deterministic / harmonic limits.
pub fn simulate_vdp<R: Rng + ?Sized>(
    theta: &[f64],
    n_s: usize,
    settings: &VdpSettings,
    rng: &mut R,
) -> Result<Option<TimeSeries>> {
    let &[eps, sigma] = theta else {
        return Err(Error::InvalidArgument(format!(
            "expected 2 parameters, got {}",
            theta.len()
        )));
    };
    if !(eps >= 0.0 && sigma >= 0.0 && eps.is_finite() && sigma.is_finite()) {
        return Err(Error::OutOfSupport {
            theta: theta.to_vec(),
            support: "[0, ∞)²".into(),
        });
    }
    let stride = settings.steps_per_sample()?;
    let dt = settings.dt;
    let noise = sigma * dt.sqrt();
    let (mut x, mut v) = settings.init;
    let mut values = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        for _ in 0..stride {
            let xi = if sigma > 0.0 { normal(rng) } else { 0.0 };
            let dv = (eps * (1.0 - x * x) * v - x) * dt + noise * xi;
            x += v * dt;
            v += dv;
        }
        if !(x.is_finite() && v.is_finite()) {
            return Ok(None);
        }
        values.push(x);
    }
    Ok(TimeSeries::checked(
        values,
        settings.out_period,
        Model::VanDerPol,
        theta,
    ))
}

/// One simulation request and its outcome inside a batch.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub index: u64,
    pub theta: ParamPoint,
    pub series: Option<TimeSeries>,
}

/// Simulates `thetas[i]` with stream `(seed, round, SIMULATION + first_index + i)`
/// in parallel; results keep input order.
pub fn simulate_batch(
    model: Model,
    thetas: &[ParamPoint],
    n_s: usize,
    seed: u64,
    round: u64,
    first_index: u64,
) -> Result<Vec<BatchItem>> {
    thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let index = first_index + i as u64;
            let mut rng: RngStream = rng::stream(seed, round, rng::purpose::SIMULATION + index);
            let series = model.simulate(theta.coords(), n_s, &mut rng)?;
            Ok(BatchItem {
                index,
                theta: theta.clone(),
                series,
            })
        })
        .collect()
}

/// A persisted set of `(θ, x)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub model: Model,
    pub n_s: usize,
    pub sample_period: f64,
    pub seed: u64,
    /// Stream index of every row.
    pub indices: Vec<u64>,
    pub thetas: Vec<Vec<f64>>,
    #[serde(skip)]
    pub series: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// CSV with header `seed,index,theta_0..,x_0..`; one row per series.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let d = self.thetas.first().map_or(0, Vec::len);
        let mut header = vec!["seed".to_string(), "index".to_string()];
        header.extend((0..d).map(|i| format!("theta_{i}")));
        header.extend((0..self.n_s).map(|i| format!("x_{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for ((idx, theta), xs) in self.indices.iter().zip(&self.thetas).zip(&self.series) {
            let mut row = vec![self.seed.to_string(), idx.to_string()];
            row.extend(theta.iter().map(|v| format!("{v:?}")));
            row.extend(xs.iter().map(|v| format!("{v:?}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Binary block in the checkpoint container: arrays `theta [count, d]`
    /// and `series [count, n_s]`, dataset header as metadata.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let d = self.thetas.first().map_or(0, Vec::len);
        let mut store = ParameterStore::new();
        store.add("theta", &[self.len(), d], self.thetas.concat())?;
        store.add("series", &[self.len(), self.n_s], self.series.concat())?;
        let meta = serde_json::to_string(self)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&store.encode(&meta))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let (store, meta) = ParameterStore::load(path)?;
        let mut ds: Dataset = serde_json::from_str(&meta)?;
        let series = store
            .find("series")
            .ok_or_else(|| Error::Checkpoint("missing `series` array".into()))?;
        let data = &store.get(series).data;
        ds.series = if ds.n_s == 0 {
            vec![Vec::new(); ds.len()]
        } else {
            data.chunks_exact(ds.n_s).map(<[f64]>::to_vec).collect()
        };
        Ok(ds)
    }
}
