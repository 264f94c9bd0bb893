use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BoxPrior, ParamPoint};
use crate::reference::DEFAULT_RESOLUTION;
use crate::simulators::Model;
use crate::snpe::{ExtractorSpec, SnpeConfig};
use crate::summaries::{ExtractorKind, SecondPool, YuleNetConfig};
use crate::transport::Order;

/// One experiment, read from a flat TOML file.
///
/// Omitted keys take the defaults below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: Model,
    pub extractor: ExtractorKind,
    /// Prior box; empty means the model's default box.
    pub prior_lower: Vec<f64>,
    pub prior_upper: Vec<f64>,
    /// Ground truth that generates the observation; empty means the model's
    /// first benchmark value.
    pub theta0: Vec<f64>,
    pub n_s: usize,
    pub n_f: usize,
    pub second_pool: SecondPool,
    pub dropout: f64,

    pub rounds: usize,
    pub sims_per_round: usize,
    pub batch_size: usize,
    pub atoms: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub max_invalid_fraction: f64,
    /// Non-positive disables clipping.
    pub clip_norm: f64,
    pub retrain_from_scratch: bool,

    pub eval_batches: usize,
    pub eval_per_batch: usize,
    pub eval_order: Order,
    pub grid_resolution: usize,
    /// Posterior draws behind each histogram.
    pub posterior_samples: usize,
    pub histogram_bins: usize,
    /// Observation lengths of the length study; empty skips it.
    pub length_study: Vec<usize>,

    pub out_dir: String,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let snpe = SnpeConfig::default();
        Self {
            model: Model::BimodalAr2,
            extractor: ExtractorKind::Yulenet,
            prior_lower: Vec::new(),
            prior_upper: Vec::new(),
            theta0: Vec::new(),
            n_s: 4096,
            n_f: 5,
            second_pool: SecondPool::default(),
            dropout: 0.5,
            rounds: snpe.rounds,
            sims_per_round: snpe.sims_per_round,
            batch_size: snpe.batch_size,
            atoms: snpe.atoms,
            learning_rate: snpe.learning_rate,
            max_epochs: snpe.max_epochs,
            patience: snpe.patience,
            validation_fraction: snpe.validation_fraction,
            max_invalid_fraction: snpe.max_invalid_fraction,
            clip_norm: snpe.clip_norm.unwrap_or(0.0),
            retrain_from_scratch: snpe.retrain_from_scratch,
            eval_batches: 100,
            eval_per_batch: 100,
            eval_order: Order::Two,
            grid_resolution: DEFAULT_RESOLUTION,
            posterior_samples: 10_000,
            histogram_bins: 50,
            length_study: Vec::new(),
            out_dir: "runs".into(),
            seed: 0,
        }
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First back-quoted name in a message, e.g. the key of "unknown field `x`".
fn quoted(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn config_error(text: &str, err: &toml::de::Error) -> Error {
    let message = err.message().to_string();
    let line = err.span().map_or(0, |s| line_of(text, s.start));
    let from_line = (line > 0)
        .then(|| text.lines().nth(line - 1))
        .flatten()
        .and_then(|l| l.split_once('='))
        .map(|(k, _)| k.trim().to_string());
    let key = quoted(&message)
        .filter(|_| message.contains("field"))
        .map(str::to_string)
        .or(from_line)
        .unwrap_or_default();
    let line = if line == 0 && !key.is_empty() {
        text.lines()
            .position(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == key))
            .map_or(0, |i| i + 1)
    } else {
        line
    };
    Error::Config { line, key, message }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(text, &e))?;
        cfg.validate().map_err(|e| match e {
            Error::Config { key, message, .. } => {
                let line = text
                    .lines()
                    .position(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == key))
                    .map_or(0, |i| i + 1);
                Error::Config { line, key, message }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            line: 0,
            key: String::new(),
            message: e.to_string(),
        })
    }

    fn invalid(key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: 0,
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn prior(&self) -> Result<BoxPrior> {
        if self.prior_lower.is_empty() && self.prior_upper.is_empty() {
            return Ok(self.model.default_prior());
        }
        BoxPrior::new(self.prior_lower.clone(), self.prior_upper.clone())
            .map_err(|e| Self::invalid("prior_lower", e.to_string()))
    }

    pub fn theta0(&self) -> ParamPoint {
        if self.theta0.is_empty() {
            self.model.ground_truths().remove(0)
        } else {
            ParamPoint(self.theta0.clone())
        }
    }

    pub fn extractor_spec(&self) -> ExtractorSpec {
        match self.extractor {
            ExtractorKind::Autocorr => ExtractorSpec::Autocorr { n_lags: self.n_f },
            ExtractorKind::Yulenet => ExtractorSpec::Yulenet(YuleNetConfig {
                n_s: self.n_s,
                n_f: self.n_f,
                second_pool: self.second_pool,
                dropout: self.dropout,
            }),
        }
    }

    pub fn snpe(&self) -> SnpeConfig {
        SnpeConfig {
            rounds: self.rounds,
            sims_per_round: self.sims_per_round,
            batch_size: self.batch_size,
            atoms: self.atoms,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            max_invalid_fraction: self.max_invalid_fraction,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            retrain_from_scratch: self.retrain_from_scratch,
            seed: self.seed,
        }
    }

    /// Checks cross-field constraints; errors carry the offending key.
    pub fn validate(&self) -> Result<()> {
        let prior = self.prior()?;
        let theta0 = self.theta0();
        if theta0.dim() != prior.dim() {
            return Err(Self::invalid(
                "theta0",
                format!("{} coordinates for a {}-D prior", theta0.dim(), prior.dim()),
            ));
        }
        if !prior.contains(theta0.coords()) {
            return Err(Self::invalid(
                "theta0",
                format!("{:?} lies outside the prior box {prior}", theta0.coords()),
            ));
        }
        if self.n_f == 0 {
            return Err(Self::invalid("n_f", "need at least one feature"));
        }
        if self.extractor == ExtractorKind::Autocorr && self.n_f < 2 {
            return Err(Self::invalid(
                "n_f",
                "autocorrelation features need n_f ≥ 2 (log variance plus lags)",
            ));
        }
        if let ExtractorSpec::Yulenet(y) = self.extractor_spec() {
            y.validate()
                .map_err(|e| Self::invalid("n_s", e.to_string()))?;
        }
        if self.n_s < 3 {
            return Err(Self::invalid("n_s", "series need at least 3 samples"));
        }
        if let Some(&bad) = self.length_study.iter().find(|&&n| n < 3) {
            return Err(Self::invalid(
                "length_study",
                format!("length {bad} is too short"),
            ));
        }
        self.snpe().validate().map_err(|e| {
            let msg = e.to_string();
            let key = [
                "rounds",
                "atoms",
                "batch_size",
                "sims_per_round",
                "validation_fraction",
                "max_invalid_fraction",
                "learning_rate",
                "max_epochs",
                "clip_norm",
            ]
            .into_iter()
            .find(|k| msg.contains(k) || msg.contains(&k.replace('_', " ")))
            .unwrap_or("rounds");
            Self::invalid(key, msg)
        })?;
        if self.eval_batches == 0 || self.eval_per_batch == 0 {
            return Err(Self::invalid(
                "eval_batches",
                "evaluation needs at least one batch of one sample",
            ));
        }
        if self.grid_resolution < 2 {
            return Err(Self::invalid(
                "grid_resolution",
                "need at least 2 cells per axis",
            ));
        }
        if self.histogram_bins == 0 {
            return Err(Self::invalid("histogram_bins", "need at least one bin"));
        }
        Ok(())
    }

    /// Parses a `R×N` budget override such as `3x1000`.
    pub fn apply_budget(&mut self, budget: &str) -> Result<()> {
        let (r, n) = budget
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| Self::invalid("budget", format!("`{budget}` is not of the form RxN")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Self::invalid("budget", format!("`{s}`: {e}")))
        };
        self.rounds = parse(r)?;
        self.sims_per_round = parse(n)?;
        Ok(())
    }

    /// Simulation budget after each round, `N, 2N, …, RN`.
    pub fn budgets(&self) -> Vec<usize> {
        (1..=self.rounds).map(|r| r * self.sims_per_round).collect()
    }
}
