//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yulenet::params::ParamPoint;
use yulenet::reference::ma2_autocovariance;
use yulenet::simulators::ar2_coefficients;
use yulenet::transport::SampleSet;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r))
        .collect()
}

/// Kalman filter on the state `(x(n), x(n−1))`, started exactly at the first
/// two observations, accumulating innovation log-densities.
pub fn kalman_ar2(theta: &[f64], x: &[f64]) -> f64 {
    let (a1, a2) = ar2_coefficients(theta[0], theta[1]);
    let f = Matrix2::new(a1, a2, 1.0, 0.0);
    let q = Matrix2::new(1.0, 0.0, 0.0, 0.0);
    let mut m = Vector2::new(x[1], x[0]);
    let mut p = Matrix2::zeros();
    let mut ll = 0.0;
    for &obs in &x[2..] {
        m = f * m;
        p = f * p * f.transpose() + q;
        let s = p[(0, 0)];
        let v = obs - m[0];
        ll += -0.5 * (LN_2PI + s.ln() + v * v / s);
        let k = p.column(0) / s;
        m += k * v;
        p -= k * k.transpose() * s;
    }
    ll
}

/// Gaussian log-likelihood under the full banded covariance, by dense Cholesky.
pub fn dense_ma2(theta: &[f64], x: &[f64]) -> f64 {
    let (g0, g1, g2) = ma2_autocovariance(theta).unwrap();
    let n = x.len();
    let cov = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => g0,
        1 => g1,
        2 => g2,
        _ => 0.0,
    });
    let chol = cov.cholesky().expect("positive definite");
    let z = chol
        .l()
        .solve_lower_triangular(&DVector::from_column_slice(x))
        .unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * (n as f64 * LN_2PI + z.norm_squared()) - log_det
}

/// Minimum assignment cost over all permutations, by Heap's algorithm.
pub fn brute_force_assignment(cost: &[f64], n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| cost[i * n + j])
            .sum::<f64>()
    };
    let mut best = total(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn random_set(n: usize, r: &mut impl Rng) -> SampleSet {
    let pts = (0..n)
        .map(|_| ParamPoint(vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]))
        .collect();
    SampleSet::new(pts, "random").unwrap()
}

/// Fraction of points within L∞ distance `radius` of `centre`.
pub fn fraction_near(points: &[ParamPoint], centre: &[f64], radius: f64) -> f64 {
    let hits = points
        .iter()
        .filter(|p| {
            p.coords()
                .iter()
                .zip(centre)
                .all(|(a, b)| (a - b).abs() <= radius)
        })
        .count();
    hits as f64 / points.len() as f64
}
