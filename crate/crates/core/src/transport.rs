//! Exact Wasserstein distances between equal-size, uniformly weighted sample
//! sets, and batched scoring of an approximate posterior against a reference.
//!
//! For two sets of `n` points with weights `1/n`, optimal transport reduces to
//! a minimum-cost perfect matching, solved here with a shortest augmenting
//! path assignment (Jonker–Volgenant family, `O(n³)`).

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamPoint;
use crate::rng::{self, RngStream};
use crate::snpe::Posterior;

/// A finite point cloud with uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<ParamPoint>,
    pub label: String,
}

impl SampleSet {
    pub fn new(points: Vec<ParamPoint>, label: impl Into<String>) -> Result<Self> {
        if let Some(first) = points.first() {
            let d = first.dim();
            if let Some(p) = points.iter().find(|p| p.dim() != d) {
                return Err(Error::InvalidArgument(format!(
                    "sample set mixes dimensions {d} and {}",
                    p.dim()
                )));
            }
        }
        if points
            .iter()
            .any(|p| p.coords().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        Ok(Self {
            points,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, ParamPoint::dim)
    }

    pub fn points(&self) -> &[ParamPoint] {
        &self.points
    }

    /// Every point multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| ParamPoint(p.coords().iter().map(|v| v * c).collect()))
                .collect(),
            label: self.label.clone(),
        }
    }

    /// CSV with header `theta_0,..`; one row per point.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = (0..self.dim())
            .map(|i| format!("theta_{i}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for p in &self.points {
            let row: Vec<String> = p.coords().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Exponent `p` of the ground cost `‖a − b‖^p`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "1")]
    One,
    #[default]
    #[serde(rename = "2")]
    Two,
}

impl Order {
    pub fn exponent(self) -> u32 {
        match self {
            Order::One => 1,
            Order::Two => 2,
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}", self.exponent())
    }
}

impl FromStr for Order {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "W1" | "w1" => Ok(Order::One),
            "2" | "W2" | "w2" => Ok(Order::Two),
            _ => Err(Error::InvalidArgument(format!(
                "unknown Wasserstein order `{s}` (expected 1 or 2)"
            ))),
        }
    }
}

/// Minimum-cost perfect matching on a row-major `n × n` cost matrix.
///
/// Returns `col_of_row` and the total cost. Row potentials `u` and column
/// potentials `v` stay dual feasible (`u[i] + v[j] ≤ c[i][j]`) after every
/// augmentation, which makes the final matching optimal.
pub fn assignment(cost: &[f64], n: usize) -> Result<(Vec<usize>, f64)> {
    if cost.len() != n * n {
        return Err(Error::shape(
            "assignment",
            format!("{} costs for a {n} × {n} matrix", cost.len()),
        ));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite assignment cost".into()));
    }
    // 1-based with column 0 as the virtual source of each augmenting path
    const NONE: usize = 0;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![NONE; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_to = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut j0 = 0;
        min_to.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == NONE {
                break;
            }
        }
        // flip the alternating path back to the source
        while j0 != 0 {
            let prev = way[j0];
            row_of_col[j0] = row_of_col[prev];
            j0 = prev;
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    let total = col_of_row
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((col_of_row, total))
}

/// Row-major `‖a_i − b_j‖^p` cost matrix.
pub fn cost_matrix(a: &SampleSet, b: &SampleSet, order: Order) -> Vec<f64> {
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for p in a.points() {
        for q in b.points() {
            let sq: f64 = p
                .coords()
                .iter()
                .zip(q.coords())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            cost.push(match order {
                Order::One => sq.sqrt(),
                Order::Two => sq,
            });
        }
    }
    cost
}

/// `(min-cost matching / n)^(1/p)` between two sets of equal size.
pub fn wasserstein(a: &SampleSet, b: &SampleSet, order: Order) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "sample sets differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty sample sets".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidArgument(format!(
            "sample sets differ in dimension ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.len();
    let (_, total) = assignment(&cost_matrix(a, b, order), n)?;
    // rounding can push a zero-cost matching a hair below zero
    let mean = (total / n as f64).max(0.0);
    Ok(match order {
        Order::One => mean,
        Order::Two => mean.sqrt(),
    })
}

/// Anything that can produce independent posterior draws from a given stream.
pub trait Sampler: Sync {
    fn draw(&self, count: usize, rng: &mut RngStream) -> Result<SampleSet>;
}

/// A trained posterior conditioned on one observation.
pub struct PosteriorAt<'a> {
    posterior: &'a Posterior,
    summary: Vec<f64>,
}

impl<'a> PosteriorAt<'a> {
    pub fn new(posterior: &'a Posterior, x: &[f64]) -> Result<Self> {
        Ok(Self {
            posterior,
            summary: posterior.summary(x)?,
        })
    }
}

impl Sampler for PosteriorAt<'_> {
    fn draw(&self, count: usize, rng: &mut RngStream) -> Result<SampleSet> {
        let pts = self
            .posterior
            .sample_given_summary(&self.summary, count, rng)?;
        SampleSet::new(pts, format!("snpe-round-{}", self.posterior.round))
    }
}

impl<F> Sampler for F
where
    F: Fn(usize, &mut RngStream) -> Result<SampleSet> + Sync,
{
    fn draw(&self, count: usize, rng: &mut RngStream) -> Result<SampleSet> {
        self(count, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinReport {
    pub distances: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean over batches; 0 for a single batch.
    pub stderr: f64,
    pub order: Order,
    pub budget: String,
}

impl WassersteinReport {
    pub fn from_distances(distances: Vec<f64>, order: Order, budget: impl Into<String>) -> Self {
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let stderr = if distances.len() > 1 {
            let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            distances,
            mean,
            stderr,
            order,
            budget: budget.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    pub batches: usize,
    pub per_batch: usize,
    pub order: Order,
    pub seed: u64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            batches: 100,
            per_batch: 100,
            order: Order::Two,
            seed: 0,
        }
    }
}

/// Batch `b` compares fresh draws from streams `(seed, b, EVALUATION)` for the
/// reference and `(seed, b, POSTERIOR)` for the approximation.
pub fn batched_eval(
    reference: &dyn Sampler,
    approx: &dyn Sampler,
    spec: &BatchSpec,
    budget: impl Into<String>,
) -> Result<WassersteinReport> {
    if spec.batches == 0 || spec.per_batch == 0 {
        return Err(Error::InvalidArgument(
            "batched evaluation needs at least one batch of one sample".into(),
        ));
    }
    let distances = (0..spec.batches as u64)
        .into_par_iter()
        .map(|b| {
            let mut rr = rng::stream(spec.seed, b, rng::purpose::EVALUATION);
            let mut ra = rng::stream(spec.seed, b, rng::purpose::POSTERIOR);
            let a = reference.draw(spec.per_batch, &mut rr)?;
            let q = approx.draw(spec.per_batch, &mut ra)?;
            wasserstein(&a, &q, spec.order)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WassersteinReport::from_distances(
        distances, spec.order, budget,
    ))
}

/// One line of a budget curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub extractor: String,
    pub model: String,
    pub budget: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Distance between two independent reference draws of the same size.
    pub floor: f64,
}

pub const CURVE_HEADER: &str = "extractor,model,budget,mean,stderr,floor";

pub fn write_curve_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = format!("{CURVE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{:?}\n",
            r.extractor, r.model, r.budget, r.mean, r.stderr, r.floor
        ));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Draws `count` points uniformly from the axis-aligned box.
pub fn uniform_box<R: Rng + ?Sized>(
    lower: &[f64],
    upper: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<ParamPoint> {
    (0..count)
        .map(|_| {
            ParamPoint(
                lower
                    .iter()
                    .zip(upper)
                    .map(|(l, h)| rng.random_range(*l..*h))
                    .collect(),
            )
        })
        .collect()
}
