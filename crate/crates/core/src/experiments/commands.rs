use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamPoint;
use crate::reference::{GridPosterior, grid_posterior};
use crate::rng::{self, AUX_ROUND, purpose};
use crate::simulators::{Dataset, Model, TimeSeries};
use crate::snpe::{Posterior, RoundReport, RoundTiming, SnpeRun, run_snpe, simulate_round};
use crate::summaries::ExtractorKind;
use crate::transport::{
    BatchSpec, CurveRow, Order, PosteriorAt, WassersteinReport, batched_eval, write_curve_csv,
};

use super::config::ExperimentConfig;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// `R×N`, e.g. `3x1000`.
    pub budget: Option<String>,
    pub extractor: Option<ExtractorKind>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = &self.budget {
            cfg.apply_budget(b)?;
        }
        if let Some(e) = self.extractor {
            cfg.extractor = e;
        }
        cfg.validate()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// The observed series: the model run at θ₀ on stream `(seed, AUX, OBSERVATION)`.
pub fn observation(cfg: &ExperimentConfig) -> Result<TimeSeries> {
    let theta0 = cfg.theta0();
    let mut r = rng::stream(cfg.seed, AUX_ROUND, purpose::OBSERVATION);
    cfg.model
        .simulate(theta0.coords(), cfg.n_s, &mut r)?
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "the observation at θ₀ = {:?} diverged; pick another seed or θ₀",
                theta0.coords()
            ))
        })
}

fn write_series(path: &Path, x: &[f64]) -> Result<()> {
    let mut out = String::from("x\n");
    for v in x {
        out.push_str(&format!("{v:?}\n"));
    }
    write(path, out)
}

fn read_series(path: &Path) -> Result<Vec<f64>> {
    read(path)?
        .lines()
        .skip(1)
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Checkpoint(format!("{}: bad value `{l}`: {e}", path.display())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub model: Model,
    pub seed: u64,
    pub n_s: usize,
    pub count: usize,
    pub attempts: usize,
    pub invalid: usize,
    pub files: Vec<String>,
}

/// Draws `count` valid `(θ, x)` pairs from the prior and writes them as CSV
/// and binary blocks next to a manifest. Parameters come from stream
/// `(seed, AUX, PROPOSAL)`; simulation `i` uses `(seed, 0, SIMULATION + i)`.
pub fn cmd_simulate(cfg: &ExperimentConfig, count: usize, out: &Path) -> Result<SimulateManifest> {
    cfg.validate()?;
    create_dir(out)?;
    let prior = cfg.prior()?;
    let mut pr = rng::stream(cfg.seed, AUX_ROUND, purpose::PROPOSAL);
    let sims = simulate_round(cfg.model, cfg.n_s, count, 0, &cfg.snpe(), |n| {
        Ok((0..n).map(|_| prior.sample(&mut pr)).collect())
    })?;
    let ds = Dataset {
        model: cfg.model,
        n_s: cfg.n_s,
        sample_period: cfg.model.sample_period(),
        seed: cfg.seed,
        indices: (0..sims.thetas.len() as u64).collect(),
        thetas: sims.thetas.iter().map(|t| t.coords().to_vec()).collect(),
        series: sims.series.iter().map(|x| x.values().to_vec()).collect(),
    };
    ds.write_csv(&out.join("dataset.csv"))?;
    ds.write_binary(&out.join("dataset.bin"))?;
    let manifest = SimulateManifest {
        model: cfg.model,
        seed: cfg.seed,
        n_s: cfg.n_s,
        count,
        attempts: sims.attempts,
        invalid: sims.invalid,
        files: vec!["dataset.csv".into(), "dataset.bin".into()],
    };
    write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Everything needed to evaluate a run without retraining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub theta0: Vec<f64>,
    pub observation: String,
    /// Checkpoint file of each round, relative to the run directory.
    pub checkpoints: Vec<String>,
    /// Cumulative simulations after each round.
    pub budgets: Vec<usize>,
    pub rounds: Vec<RoundReport>,
}

pub const MANIFEST: &str = "manifest.json";
/// Wall-clock timings live in their own file so the manifest stays reproducible.
pub const TIMINGS: &str = "timings.json";
pub const OBSERVATION: &str = "observation.csv";

pub fn checkpoint_name(round: usize) -> String {
    format!("round-{round:02}.ckpt")
}

pub struct InferOutcome {
    pub manifest: RunManifest,
    pub run: SnpeRun,
    pub observation: TimeSeries,
}

/// Runs SNPE-C for one config and persists config, observation, per-round
/// checkpoints, manifest and timings under `out`.
pub fn cmd_infer(cfg: &ExperimentConfig, out: &Path) -> Result<InferOutcome> {
    cfg.validate()?;
    create_dir(out)?;
    let prior = cfg.prior()?;
    let x0 = observation(cfg)?;
    write(&out.join("config.toml"), cfg.to_toml()?)?;
    write_series(&out.join(OBSERVATION), x0.values())?;
    let run = run_snpe(cfg.model, &prior, cfg.extractor_spec(), &x0, &cfg.snpe())?;
    let mut checkpoints = Vec::with_capacity(run.checkpoints.len());
    for post in &run.checkpoints {
        let name = checkpoint_name(post.round);
        post.save(&out.join(&name))?;
        checkpoints.push(name);
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        theta0: cfg.theta0().coords().to_vec(),
        observation: OBSERVATION.into(),
        checkpoints,
        budgets: run
            .rounds
            .iter()
            .map(|r| r.cumulative_simulations)
            .collect(),
        rounds: run.rounds.clone(),
    };
    write(
        &out.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    write(
        &out.join(TIMINGS),
        serde_json::to_string_pretty::<Vec<RoundTiming>>(&run.timings)?,
    )?;
    Ok(InferOutcome {
        manifest,
        run,
        observation: x0,
    })
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&read(&run_dir.join(MANIFEST))?)?)
}

pub fn load_observation(run_dir: &Path, manifest: &RunManifest) -> Result<Vec<f64>> {
    read_series(&run_dir.join(&manifest.observation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<CurveRow>,
    pub reports: Vec<WassersteinReport>,
    /// Reference against an independent draw of itself.
    pub floor: WassersteinReport,
}

pub const CURVE: &str = "wasserstein.csv";

/// Scores every round checkpoint of a run against the grid reference and
/// writes one curve row per round. `order` overrides the config's order.
pub fn cmd_evaluate(run_dir: &Path, order: Option<Order>) -> Result<Evaluation> {
    let manifest = load_manifest(run_dir)?;
    let cfg = &manifest.config;
    if !cfg.model.has_reference() {
        return Err(Error::NoReference(cfg.model.id().into()));
    }
    let x0 = load_observation(run_dir, &manifest)?;
    let reference = grid_posterior(cfg.model, &x0, &cfg.prior()?, cfg.grid_resolution)?;
    reference.save(&run_dir.join("reference.grid"))?;
    let spec = BatchSpec {
        batches: cfg.eval_batches,
        per_batch: cfg.eval_per_batch,
        order: order.unwrap_or(cfg.eval_order),
        seed: cfg.seed,
    };
    let floor = batched_eval(&reference, &reference, &spec, "reference")?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (name, &budget) in manifest.checkpoints.iter().zip(&manifest.budgets) {
        let post = Posterior::load(&run_dir.join(name))?;
        let at = PosteriorAt::new(&post, &x0)?;
        let report = batched_eval(&reference, &at, &spec, budget.to_string())?;
        rows.push(CurveRow {
            extractor: cfg.extractor.id().into(),
            model: cfg.model.id().into(),
            budget,
            mean: report.mean,
            stderr: report.stderr,
            floor: floor.mean,
        });
        reports.push(report);
    }
    write_curve_csv(&rows, &run_dir.join(CURVE))?;
    let eval = Evaluation {
        rows,
        reports,
        floor,
    };
    write(
        &run_dir.join("wasserstein.json"),
        serde_json::to_string_pretty(&eval)?,
    )?;
    Ok(eval)
}

/// `*.toml` files of a directory in name order.
pub fn config_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .toml configs in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

/// Trains and scores every config of a directory; writes the combined
/// distance-versus-budget curve to `out/figure1.csv`.
pub fn cmd_figure1(config_dir: &Path, out: &Path, overrides: &Overrides) -> Result<Vec<CurveRow>> {
    create_dir(out)?;
    let mut rows = Vec::new();
    for file in config_files(config_dir)? {
        let mut cfg = ExperimentConfig::load(&file)?;
        overrides.apply(&mut cfg)?;
        let run_dir = out.join(stem(&file));
        cmd_infer(&cfg, &run_dir)?;
        rows.extend(cmd_evaluate(&run_dir, None)?.rows);
    }
    write_curve_csv(&rows, &out.join("figure1.csv"))?;
    Ok(rows)
}

/// Counts of posterior draws on a `bins × bins` grid over the prior box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub bins: usize,
    /// Row-major `[i0 * bins + i1]`.
    pub counts: Vec<usize>,
}

impl Histogram2d {
    pub fn new(lower: [f64; 2], upper: [f64; 2], bins: usize, points: &[ParamPoint]) -> Self {
        let mut counts = vec![0; bins * bins];
        let idx = |v: f64, lo: f64, hi: f64| {
            (((v - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        };
        for p in points {
            let i0 = idx(p[0], lower[0], upper[0]);
            let i1 = idx(p[1], lower[1], upper[1]);
            counts[i0 * bins + i1] += 1;
        }
        Self {
            lower,
            upper,
            bins,
            counts,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("bin_0,bin_1,center_0,center_1,count\n");
        let w = |d: usize| (self.upper[d] - self.lower[d]) / self.bins as f64;
        for i0 in 0..self.bins {
            for i1 in 0..self.bins {
                out.push_str(&format!(
                    "{i0},{i1},{:?},{:?},{}\n",
                    self.lower[0] + (i0 as f64 + 0.5) * w(0),
                    self.lower[1] + (i1 as f64 + 0.5) * w(1),
                    self.counts[i0 * self.bins + i1]
                ));
            }
        }
        write(path, out)
    }
}

/// Location and spread of one posterior sample behind a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub name: String,
    pub theta0: Vec<f64>,
    pub n_s: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn moments(points: &[ParamPoint]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() as f64;
    let d = points.first().map_or(0, ParamPoint::dim);
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let std = (0..d)
        .map(|j| {
            let v = points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            v.sqrt()
        })
        .collect();
    (mean, std)
}

/// Trains one config, draws `posterior_samples` from the final posterior at
/// the observation, and writes the histogram into `dir`.
fn histogram_run(cfg: &ExperimentConfig, dir: &Path, name: String) -> Result<PosteriorSummary> {
    let outcome = cmd_infer(cfg, dir)?;
    let prior = cfg.prior()?;
    let mut r = rng::stream(cfg.seed, AUX_ROUND, purpose::POSTERIOR);
    let draws = outcome.run.posterior().sample(
        outcome.observation.values(),
        cfg.posterior_samples,
        &mut r,
    )?;
    let lower = [prior.lower()[0], prior.lower()[1]];
    let upper = [prior.upper()[0], prior.upper()[1]];
    Histogram2d::new(lower, upper, cfg.histogram_bins, &draws)
        .write_csv(&dir.join("histogram.csv"))?;
    let (mean, std) = moments(&draws);
    Ok(PosteriorSummary {
        name,
        theta0: cfg.theta0().coords().to_vec(),
        n_s: cfg.n_s,
        mean,
        std,
    })
}

/// Posterior histograms for every config of a directory, plus one histogram
/// per entry of each config's `length_study` at the same θ₀. A summary of
/// every histogram goes to `out/figure2.csv`.
pub fn cmd_figure2(
    config_dir: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<Vec<PosteriorSummary>> {
    create_dir(out)?;
    let mut summaries = Vec::new();
    for file in config_files(config_dir)? {
        let mut cfg = ExperimentConfig::load(&file)?;
        overrides.apply(&mut cfg)?;
        let name = stem(&file);
        summaries.push(histogram_run(&cfg, &out.join(&name), name.clone())?);
        for &n_s in &cfg.length_study {
            let mut c = cfg.clone();
            c.n_s = n_s;
            c.length_study.clear();
            c.validate()?;
            let tag = format!("{name}-length-{n_s}");
            summaries.push(histogram_run(
                &c,
                &out.join(&name).join(format!("length-{n_s}")),
                tag,
            )?);
        }
    }
    let mut csv = String::from("name,theta0_0,theta0_1,n_s,mean_0,mean_1,std_0,std_1\n");
    for s in &summaries {
        csv.push_str(&format!(
            "{},{:?},{:?},{},{:?},{:?},{:?},{:?}\n",
            s.name, s.theta0[0], s.theta0[1], s.n_s, s.mean[0], s.mean[1], s.std[0], s.std[1]
        ));
    }
    write(&out.join("figure2.csv"), csv)?;
    Ok(summaries)
}

/// The grid reference saved by [`cmd_evaluate`].
pub fn load_reference(run_dir: &Path) -> Result<GridPosterior> {
    GridPosterior::load(&run_dir.join("reference.grid"))
}
