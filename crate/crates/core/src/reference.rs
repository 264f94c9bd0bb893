//! Exact Gaussian likelihoods of the two linear models and grid posteriors
//! built from them. These serve as ground truth for Wasserstein scoring.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterStore;
use crate::params::{BoxPrior, ParamPoint};
use crate::rng::RngStream;
use crate::simulators::{Model, ar2_coefficients, ma2_coefficients};
use crate::transport::{SampleSet, Sampler};

pub const DEFAULT_RESOLUTION: usize = 401;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn pair(theta: &[f64]) -> Result<(f64, f64)> {
    match theta {
        &[a, b] => Ok((a, b)),
        _ => Err(Error::InvalidArgument(format!(
            "expected 2 parameters, got {}",
            theta.len()
        ))),
    }
}

/// Log-likelihood of `x(2..)` given `x(0), x(1)` under unit-variance AR(2)
/// innovations. Depends on θ only through `(a1, a2)`, so both preimages of
/// a coefficient pair score identically.
pub fn ar2_exact_loglik(theta: &[f64], x: &[f64]) -> Result<f64> {
    let (k1, k2) = pair(theta)?;
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "AR(2) likelihood needs at least 3 observations, got {}",
            x.len()
        )));
    }
    let (a1, a2) = ar2_coefficients(k1, k2);
    let mut ss = 0.0;
    for w in x.windows(3) {
        let e = w[2] - a1 * w[1] - a2 * w[0];
        ss += e * e;
    }
    let m = (x.len() - 2) as f64;
    Ok(-0.5 * (m * LN_2PI + ss))
}

/// Autocovariances `(γ₀, γ₁, γ₂)` of unit-innovation MA(2); zero beyond lag 2.
pub fn ma2_autocovariance(theta: &[f64]) -> Result<(f64, f64, f64)> {
    let (k1, k2) = pair(theta)?;
    let (b1, b2) = ma2_coefficients(k1, k2);
    Ok((1.0 + b1 * b1 + b2 * b2, b1 * (1.0 + k2), b2))
}

/// Exact Gaussian log-likelihood under the pentadiagonal MA(2) covariance,
/// by banded Cholesky in `O(n)`.
pub fn ma2_exact_loglik(theta: &[f64], x: &[f64]) -> Result<f64> {
    let (g0, g1, g2) = ma2_autocovariance(theta)?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    // row i of L holds (f, e, d) at columns (i−2, i−1, i)
    let (mut d1, mut d2) = (0.0, 0.0);
    let mut e1 = 0.0;
    let (mut z1, mut z2) = (0.0, 0.0);
    let mut log_det = 0.0;
    let mut quad = 0.0;
    let mut i = 0;
    while i < x.len() {
        let f = if i >= 2 { g2 / d2 } else { 0.0 };
        let e = if i >= 1 { (g1 - f * e1) / d1 } else { 0.0 };
        let dd = g0 - e * e - f * f;
        if dd <= 0.0 || !dd.is_finite() {
            return Err(Error::NotPositiveDefinite(i));
        }
        let d = dd.sqrt();
        let z = (x[i] - e * z1 - f * z2) / d;
        log_det += d.ln();
        quad += z * z;
        // the factor rows depend only on (d1, d2, e1): once those repeat
        // bitwise, every later row is this one
        let steady = i >= 3 && d == d1 && d1 == d2 && e == e1;
        (d2, d1) = (d1, d);
        e1 = e;
        (z2, z1) = (z1, z);
        i += 1;
        if steady {
            log_det += (x.len() - i) as f64 * d.ln();
            for &xi in &x[i..] {
                let z = (xi - e * z1 - f * z2) / d;
                quad += z * z;
                (z2, z1) = (z1, z);
            }
            break;
        }
    }
    Ok(-0.5 * (x.len() as f64 * LN_2PI + quad) - log_det)
}

/// Exact log-likelihood of `x` under `model`; `NoReference` for the oscillator.
pub fn exact_loglik(model: Model, theta: &[f64], x: &[f64]) -> Result<f64> {
    match model {
        Model::BimodalAr2 => ar2_exact_loglik(theta, x),
        Model::Ma2 => ma2_exact_loglik(theta, x),
        Model::VanDerPol => Err(Error::NoReference(model.id().into())),
    }
}

/// A normalized posterior tabulated at the centres of a uniform grid over a
/// 2-D prior box. Cell masses are `exp(log_density − log_normalizer)·area`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub resolution: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Unnormalized log-density, row-major `[i0 * resolution + i1]`.
    #[serde(skip)]
    pub log_density: Vec<f64>,
    pub log_normalizer: f64,
}

impl GridPosterior {
    /// Tabulates `log_density(θ)` at every cell centre (in parallel) and
    /// normalizes by log-sum-exp.
    pub fn from_fn<F>(prior: &BoxPrior, resolution: usize, log_density: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        if prior.dim() != 2 {
            return Err(Error::InvalidArgument(format!(
                "grid posteriors need a 2-D prior, got {}",
                prior.dim()
            )));
        }
        if resolution == 0 {
            return Err(Error::InvalidArgument(
                "grid resolution must be positive".into(),
            ));
        }
        let lower = [prior.lower()[0], prior.lower()[1]];
        let upper = [prior.upper()[0], prior.upper()[1]];
        let mut gp = Self {
            resolution,
            lower,
            upper,
            log_density: Vec::new(),
            log_normalizer: 0.0,
        };
        let log_prior = -prior.volume().ln();
        gp.log_density = (0..resolution * resolution)
            .into_par_iter()
            .map(|c| Ok(log_density(&gp.center(c))? + log_prior))
            .collect::<Result<Vec<_>>>()?;
        let max = gp
            .log_density
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidArgument(
                "grid log-density has no finite maximum".into(),
            ));
        }
        let sum: f64 = gp.log_density.iter().map(|l| (l - max).exp()).sum();
        gp.log_normalizer = max + sum.ln() + gp.cell_area().ln();
        Ok(gp)
    }

    pub fn cell_width(&self) -> [f64; 2] {
        let n = self.resolution as f64;
        [
            (self.upper[0] - self.lower[0]) / n,
            (self.upper[1] - self.lower[1]) / n,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        let [h0, h1] = self.cell_width();
        h0 * h1
    }

    pub fn cell_count(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let [h0, h1] = self.cell_width();
        let (i0, i1) = (cell / self.resolution, cell % self.resolution);
        [
            self.lower[0] + (i0 as f64 + 0.5) * h0,
            self.lower[1] + (i1 as f64 + 0.5) * h1,
        ]
    }

    /// Cell containing θ, or `None` outside the box.
    pub fn cell_of(&self, theta: &[f64]) -> Option<usize> {
        let [h0, h1] = self.cell_width();
        let n = self.resolution;
        let idx = |v: f64, lo: f64, hi: f64, h: f64| {
            (lo..hi)
                .contains(&v)
                .then(|| (((v - lo) / h) as usize).min(n - 1))
        };
        let i0 = idx(theta[0], self.lower[0], self.upper[0], h0)?;
        let i1 = idx(theta[1], self.lower[1], self.upper[1], h1)?;
        Some(i0 * n + i1)
    }

    /// Normalized density at θ; zero outside the box.
    pub fn density(&self, theta: &[f64]) -> f64 {
        self.cell_of(theta)
            .map_or(0.0, |c| (self.log_density[c] - self.log_normalizer).exp())
    }

    /// Probability mass of every cell; sums to one.
    pub fn masses(&self) -> Vec<f64> {
        let area = self.cell_area();
        self.log_density
            .iter()
            .map(|l| (l - self.log_normalizer).exp() * area)
            .collect()
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (c, w) in self.masses().into_iter().enumerate() {
            let p = self.center(c);
            m[0] += w * p[0];
            m[1] += w * p[1];
        }
        m
    }

    /// Cells whose density is at least that of all 8 neighbours and at least
    /// `min_ratio` times the global maximum, ordered by decreasing density.
    pub fn local_maxima(&self, min_ratio: f64) -> Vec<[f64; 2]> {
        let n = self.resolution as isize;
        let ld = &self.log_density;
        let top = ld.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = top + min_ratio.ln();
        let mut found: Vec<(f64, usize)> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let c = (i * n + j) as usize;
                if ld[c] < floor {
                    continue;
                }
                let is_max = (-1..=1).all(|di| {
                    (-1..=1).all(|dj| {
                        let (a, b) = (i + di, j + dj);
                        !(0..n).contains(&a)
                            || !(0..n).contains(&b)
                            || ld[(a * n + b) as usize] <= ld[c]
                    })
                });
                if is_max {
                    found.push((ld[c], c));
                }
            }
        }
        found.sort_by(|a, b| b.0.total_cmp(&a.0));
        found.into_iter().map(|(_, c)| self.center(c)).collect()
    }

    /// Categorical draw over cells by mass, then uniform jitter inside the cell.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<ParamPoint> {
        let mut cdf = self.masses();
        let mut acc = 0.0;
        for m in cdf.iter_mut() {
            acc += *m;
            *m = acc;
        }
        let [h0, h1] = self.cell_width();
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let c = cdf.partition_point(|&v| v <= u).min(cdf.len() - 1);
                let [c0, c1] = self.center(c);
                ParamPoint(vec![
                    c0 + (rng.random::<f64>() - 0.5) * h0,
                    c1 + (rng.random::<f64>() - 0.5) * h1,
                ])
            })
            .collect()
    }

    /// Binary array block with this header as JSON metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = ParameterStore::new();
        store.add(
            "log_density",
            &[self.resolution, self.resolution],
            self.log_density.clone(),
        )?;
        let meta = serde_json::to_string(self)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&store.encode(&meta))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = ParameterStore::load(path)?;
        let mut gp: GridPosterior = serde_json::from_str(&meta)?;
        let id = store
            .find("log_density")
            .ok_or_else(|| Error::Checkpoint("missing `log_density` array".into()))?;
        gp.log_density = store.get(id).data.clone();
        if gp.log_density.len() != gp.cell_count() {
            return Err(Error::Checkpoint(format!(
                "log_density has {} cells, header says {}",
                gp.log_density.len(),
                gp.cell_count()
            )));
        }
        Ok(gp)
    }
}

impl Sampler for GridPosterior {
    fn draw(&self, count: usize, rng: &mut RngStream) -> Result<SampleSet> {
        SampleSet::new(self.sample(count, rng), "reference")
    }
}

/// Exact posterior of `model` given `x0` on a `resolution²` grid.
pub fn grid_posterior(
    model: Model,
    x0: &[f64],
    prior: &BoxPrior,
    resolution: usize,
) -> Result<GridPosterior> {
    if !model.has_reference() {
        return Err(Error::NoReference(model.id().into()));
    }
    GridPosterior::from_fn(prior, resolution, |theta| exact_loglik(model, theta, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::ar2_mirror;
    use crate::summaries::theoretical_autocorr_ma2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r))
            .collect()
    }

    #[test]
    fn zero_parameters_give_white_noise_likelihoods() {
        let x = white(50, 1);
        let wn = |xs: &[f64]| xs.iter().map(|v| -0.5 * (LN_2PI + v * v)).sum::<f64>();
        assert!((ar2_exact_loglik(&[0.0, 0.0], &x).unwrap() - wn(&x[2..])).abs() < 1e-10);
        assert!((ma2_exact_loglik(&[0.0, 0.0], &x).unwrap() - wn(&x)).abs() < 1e-10);
    }

    #[test]
    fn ar2_preimages_share_a_likelihood() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let x = white(200, seed);
            let k1 = r.random_range(-0.9..0.9);
            let k2 = r.random_range(-0.9..0.9);
            let (m1, m2) = ar2_mirror(k1, k2);
            let a = ar2_exact_loglik(&[k1, k2], &x).unwrap();
            let b = ar2_exact_loglik(&[m1, m2], &x).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn ma2_lag_two_ratio_matches_closed_form() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let th = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            let (g0, _, g2) = ma2_autocovariance(&th).unwrap();
            let rho = theoretical_autocorr_ma2(&th, 2).unwrap();
            assert!((g2 / g0 - rho[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_likelihood_gives_uniform_grid() {
        let prior = Model::Ma2.default_prior();
        let gp = GridPosterior::from_fn(&prior, 11, |_| Ok(3.0)).unwrap();
        let m = gp.masses();
        assert!(m.iter().all(|v| (v - 1.0 / 121.0).abs() < 1e-15));
        assert!((gp.density(&[0.1, 0.2]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn masses_sum_to_one_and_vanish_outside() {
        let prior = Model::BimodalAr2.default_prior();
        let x = white(64, 4);
        let gp = grid_posterior(Model::BimodalAr2, &x, &prior, 51).unwrap();
        assert!((gp.masses().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert_eq!(gp.density(&[1.2, 0.0]), 0.0);
        assert_eq!(gp.density(&[0.0, -1.0001]), 0.0);
    }

    #[test]
    fn single_cell_mass_keeps_samples_in_the_cell() {
        let prior = Model::Ma2.default_prior();
        let target = 17;
        let n = 9;
        let flat = GridPosterior::from_fn(&prior, n, |_| Ok(0.0)).unwrap();
        let gp = GridPosterior::from_fn(&prior, n, |t| {
            Ok(if flat.cell_of(t) == Some(target) {
                0.0
            } else {
                f64::NEG_INFINITY
            })
        })
        .unwrap();
        let s = gp.sample(500, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(s.iter().all(|p| gp.cell_of(p.coords()) == Some(target)));
    }

    #[test]
    fn oscillator_has_no_reference() {
        let prior = Model::VanDerPol.default_prior();
        assert!(matches!(
            grid_posterior(Model::VanDerPol, &[0.0; 8], &prior, 5),
            Err(Error::NoReference(_))
        ));
    }
}
