//! Multi-round sequential neural posterior estimation with the atomic
//! proposal correction, training the summary extractor and the flow jointly.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::seq::SliceRandom;
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ConditionalFlow, FlowConfig};
use crate::nn::{Adam, Bound, Graph, ParameterStore, Var};
use crate::params::{BoxPrior, ParamPoint};
use crate::rng::{self, RngStream, purpose};
use crate::simulators::{Model, TimeSeries, simulate_batch};
use crate::summaries::{ExtractorKind, Standardizer, YuleNet, YuleNetConfig, autocorr_features};

/// Series per graph when extracting features outside training.
const EXTRACT_CHUNK: usize = 100;

/// Proposal draws per accepted draw before giving up on a degenerate posterior.
const MAX_PROPOSAL_FACTOR: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnpeConfig {
    pub rounds: usize,
    pub sims_per_round: usize,
    pub batch_size: usize,
    pub atoms: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// A round aborts once more than this fraction of its simulations diverged.
    pub max_invalid_fraction: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Re-initialize all weights at the start of every round instead of fine-tuning.
    pub retrain_from_scratch: bool,
    pub seed: u64,
}

impl Default for SnpeConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            sims_per_round: 5000,
            batch_size: 100,
            atoms: 10,
            learning_rate: 5e-4,
            max_epochs: 200,
            patience: 20,
            validation_fraction: 0.1,
            max_invalid_fraction: 0.2,
            clip_norm: Some(5.0),
            retrain_from_scratch: false,
            seed: 0,
        }
    }
}

impl SnpeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.atoms < 2 {
            return bad(format!("atoms must be at least 2, got {}", self.atoms));
        }
        if self.batch_size < self.atoms {
            return bad(format!(
                "batch size {} below atom count {}",
                self.batch_size, self.atoms
            ));
        }
        if self.sims_per_round < self.batch_size {
            return bad(format!(
                "sims_per_round {} below batch size {}",
                self.sims_per_round, self.batch_size
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.max_invalid_fraction > 0.0 && self.max_invalid_fraction < 1.0) {
            return bad(format!(
                "max_invalid_fraction {} outside (0, 1)",
                self.max_invalid_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        let n_val = self.validation_size(self.sims_per_round);
        if n_val < self.atoms || self.sims_per_round - n_val < self.atoms {
            return bad(format!(
                "a {}-item round splits into {n_val} validation items; both parts need at least {} atoms",
                self.sims_per_round, self.atoms
            ));
        }
        Ok(())
    }

    fn validation_size(&self, total: usize) -> usize {
        ((total as f64 * self.validation_fraction).ceil() as usize).min(total)
    }
}

/// How the summary features are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExtractorSpec {
    Autocorr { n_lags: usize },
    Yulenet(YuleNetConfig),
}

impl ExtractorSpec {
    pub fn kind(&self) -> ExtractorKind {
        match self {
            Self::Autocorr { .. } => ExtractorKind::Autocorr,
            Self::Yulenet(_) => ExtractorKind::Yulenet,
        }
    }

    pub fn n_f(&self) -> usize {
        match self {
            Self::Autocorr { n_lags } => *n_lags,
            Self::Yulenet(c) => c.n_f,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PosteriorMeta {
    model: Model,
    prior: BoxPrior,
    n_s: usize,
    extractor: ExtractorSpec,
    flow: FlowConfig,
    orders: Vec<Vec<usize>>,
    standardizer: Standardizer,
    round: usize,
}

/// A trained (or freshly initialized) conditional posterior `q(θ | x)`.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub model: Model,
    pub prior: BoxPrior,
    pub n_s: usize,
    pub spec: ExtractorSpec,
    pub standardizer: Standardizer,
    pub store: ParameterStore,
    /// Number of completed training rounds.
    pub round: usize,
    yulenet: Option<YuleNet>,
    flow: ConditionalFlow,
}

impl Posterior {
    pub fn new(
        model: Model,
        prior: BoxPrior,
        n_s: usize,
        spec: ExtractorSpec,
        seed: u64,
    ) -> Result<Self> {
        Self::initialized(
            model,
            prior,
            n_s,
            spec,
            &mut rng::stream(seed, 0, purpose::INIT),
        )
    }

    fn initialized(
        model: Model,
        prior: BoxPrior,
        n_s: usize,
        spec: ExtractorSpec,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut store = ParameterStore::new();
        let yulenet = match spec {
            ExtractorSpec::Autocorr { n_lags } => {
                if n_lags == 0 {
                    return Err(Error::InvalidArgument("n_lags must be positive".into()));
                }
                None
            }
            ExtractorSpec::Yulenet(cfg) => {
                if cfg.n_s != n_s {
                    return Err(Error::InvalidArgument(format!(
                        "extractor built for n_s = {}, series have n_s = {n_s}",
                        cfg.n_s
                    )));
                }
                Some(YuleNet::new(cfg, &mut store, rng)?)
            }
        };
        let flow = ConditionalFlow::new(FlowConfig::new(prior.dim(), spec.n_f()), &mut store, rng)?;
        Ok(Self {
            model,
            prior,
            n_s,
            spec,
            standardizer: Standardizer::identity(spec.n_f()),
            store,
            round: 0,
            yulenet,
            flow,
        })
    }

    pub fn flow(&self) -> &ConditionalFlow {
        &self.flow
    }

    pub fn yulenet(&self) -> Option<&YuleNet> {
        self.yulenet.as_ref()
    }

    /// Unstandardized features of several series (dropout off).
    pub fn raw_features(&self, series: &[&[f64]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(series.len() * self.spec.n_f());
        match (&self.spec, &self.yulenet) {
            (ExtractorSpec::Autocorr { n_lags }, _) => {
                for x in series {
                    out.extend(autocorr_features(x, *n_lags)?);
                }
            }
            (ExtractorSpec::Yulenet(_), Some(net)) => {
                let mut unused = rng::stream(0, 0, 0);
                for chunk in series.chunks(EXTRACT_CHUNK) {
                    let mut g = Graph::new();
                    let p = g.bind(&self.store);
                    let y = net.forward_series(&mut g, &p, chunk, false, &mut unused)?;
                    out.extend_from_slice(g.value(y));
                }
            }
            (ExtractorSpec::Yulenet(_), None) => {
                unreachable!("YuleNet spec always carries a network")
            }
        }
        Ok(out)
    }

    /// Standardized summary `s = f(x)` fed to the flow.
    pub fn summary(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.raw_features(&[x])?;
        self.standardizer.apply_in_place(&mut s);
        Ok(s)
    }

    /// `count` draws of θ from `q(θ | x)`, all strictly inside the prior box.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<ParamPoint>> {
        let s = self.summary(x)?;
        self.sample_given_summary(&s, count, rng)
    }

    pub fn sample_given_summary<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<ParamPoint>> {
        let d = self.prior.dim();
        let mut out = Vec::with_capacity(count);
        let mut drawn = 0;
        while out.len() < count {
            if drawn > MAX_PROPOSAL_FACTOR * count.max(1) {
                return Err(Error::ProposalExhausted {
                    accepted: out.len(),
                    drawn,
                });
            }
            let need = count - out.len();
            let u = self.flow.sample(&self.store, s, need, rng)?;
            drawn += need;
            for row in u.chunks_exact(d) {
                let theta = self.prior.constrain(row);
                // a saturated sigmoid lands on the boundary, which is outside the open box
                if self.prior.contains(&theta) {
                    out.push(ParamPoint(theta));
                }
            }
        }
        Ok(out)
    }

    /// `log q(θ | x)` in parameter space for row-major θ; `−∞` outside the box.
    pub fn log_prob(&self, thetas: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let d = self.prior.dim();
        let s = self.summary(x)?;
        let rows = thetas.len() / d;
        let mut u = Vec::with_capacity(thetas.len());
        let mut inside = Vec::with_capacity(rows);
        for t in thetas.chunks_exact(d) {
            let ok = self.prior.contains(t);
            inside.push(ok);
            u.extend(if ok {
                self.prior.unconstrain(t)?
            } else {
                vec![0.0; d]
            });
        }
        let lq = self
            .flow
            .log_prob_values(&self.store, &u, &s.repeat(rows))?;
        Ok(thetas
            .chunks_exact(d)
            .zip(lq)
            .zip(inside)
            .map(|((t, l), ok)| {
                if ok {
                    l + self.prior.log_det_unconstrain(t)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    }

    fn meta(&self) -> PosteriorMeta {
        PosteriorMeta {
            model: self.model,
            prior: self.prior.clone(),
            n_s: self.n_s,
            extractor: self.spec,
            flow: self.flow.config().clone(),
            orders: self.flow.orders(),
            standardizer: self.standardizer.clone(),
            round: self.round,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        Ok(self.store.encode(&serde_json::to_string(&self.meta())?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = ParameterStore::load(path)?;
        let meta: PosteriorMeta = serde_json::from_str(&meta)?;
        let yulenet = match meta.extractor {
            ExtractorSpec::Yulenet(cfg) => Some(YuleNet::attach(cfg, &store)?),
            ExtractorSpec::Autocorr { .. } => None,
        };
        let flow = ConditionalFlow::attach(meta.flow, &store)?;
        if flow.orders() != meta.orders {
            return Err(Error::Checkpoint(
                "flow orders in header do not match the configuration".into(),
            ));
        }
        Ok(Self {
            model: meta.model,
            prior: meta.prior,
            n_s: meta.n_s,
            spec: meta.extractor,
            standardizer: meta.standardizer,
            store,
            round: meta.round,
            yulenet,
            flow,
        })
    }
}

/// Accumulated `(θ, x)` pairs with everything the loss needs per item.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    dim: usize,
    n_s: usize,
    n_f: usize,
    pub thetas: Vec<f64>,
    /// Unconstrained images of `thetas`.
    pub us: Vec<f64>,
    /// `log|det ∂u/∂θ| − log p(θ)` per item: converts `log q_u` into the atom logits.
    pub offsets: Vec<f64>,
    /// Raw series, kept only when the extractor is trainable.
    pub series: Vec<f64>,
    /// Raw fixed features, kept only for fixed extractors.
    pub features: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize, n_s: usize, n_f: usize) -> Self {
        Self {
            dim,
            n_s,
            n_f,
            thetas: Vec::new(),
            us: Vec::new(),
            offsets: Vec::new(),
            series: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Appends one item; `features` is `Some` exactly for fixed extractors.
    pub fn push(
        &mut self,
        prior: &BoxPrior,
        theta: &[f64],
        series: &[f64],
        features: Option<&[f64]>,
    ) -> Result<()> {
        if theta.len() != self.dim || series.len() != self.n_s {
            return Err(Error::shape(
                "training set",
                format!(
                    "θ of length {} and series of length {}",
                    theta.len(),
                    series.len()
                ),
            ));
        }
        let u = prior.unconstrain(theta)?;
        self.thetas.extend_from_slice(theta);
        self.us.extend(u);
        self.offsets
            .push(prior.log_det_unconstrain(theta) - prior.log_pdf(theta));
        match features {
            Some(f) => {
                if f.len() != self.n_f {
                    return Err(Error::shape(
                        "training set",
                        format!("{} features, expected {}", f.len(), self.n_f),
                    ));
                }
                self.features.extend_from_slice(f);
            }
            None => self.series.extend_from_slice(series),
        }
        Ok(())
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.dim..(i + 1) * self.dim]
    }
}

/// `mean_i [logsumexp_j ℓ_ij − ℓ_i0]` with `ℓ = log_q + offsets`, where
/// `log_q` is `[B·K]` laid out item-major and atom 0 is the true parameter.
pub fn atomic_nll(g: &mut Graph, log_q: Var, offsets: &[f64], atoms: usize) -> Result<Var> {
    let n = g.shape(log_q).iter().product::<usize>();
    if atoms == 0 || n % atoms != 0 || offsets.len() != n {
        return Err(Error::shape(
            "atomic loss",
            format!(
                "{n} log-densities, {} offsets, {atoms} atoms",
                offsets.len()
            ),
        ));
    }
    let b = n / atoms;
    let off = g.input(offsets.to_vec(), &[n])?;
    let logits = g.add(log_q, off)?;
    let logits = g.reshape(logits, &[b, atoms])?;
    let lse = g.logsumexp_rows(logits)?;
    let own = g.slice_cols(logits, 0, 1)?;
    let own = g.reshape(own, &[b])?;
    let per_item = g.sub(lse, own)?;
    Ok(g.mean(per_item))
}

/// Summary rows for `idx`, standardized; trainable extractors run in `training` mode.
fn batch_summaries<R: Rng + ?Sized>(
    post: &Posterior,
    g: &mut Graph,
    p: &Bound,
    set: &TrainingSet,
    idx: &[usize],
    training: bool,
    dropout: &mut R,
) -> Result<Var> {
    let n_f = post.spec.n_f();
    match &post.yulenet {
        None => {
            let mut rows = Vec::with_capacity(idx.len() * n_f);
            for &i in idx {
                rows.extend_from_slice(&set.features[i * n_f..(i + 1) * n_f]);
            }
            post.standardizer.apply_in_place(&mut rows);
            g.input(rows, &[idx.len(), n_f])
        }
        Some(net) => {
            let mut data = Vec::with_capacity(idx.len() * set.n_s);
            for &i in idx {
                data.extend_from_slice(&set.series[i * set.n_s..(i + 1) * set.n_s]);
            }
            let x = g.input(data, &[idx.len(), 1, set.n_s])?;
            let y = net.forward(g, p, x, training, dropout)?;
            let (shift, scale) = post.standardizer.affine();
            g.affine_cols(y, &shift, &scale)
        }
    }
}

/// Training loss on one batch: the direct `−log q(u | s)` when `atoms` is
/// `None`, otherwise the atomic loss with `atoms − 1` contrasting parameters
/// drawn without replacement from the rest of the batch.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    post: &Posterior,
    g: &mut Graph,
    p: &Bound,
    set: &TrainingSet,
    idx: &[usize],
    atoms: Option<usize>,
    training: bool,
    atom_rng: &mut R1,
    dropout: &mut R2,
) -> Result<Var> {
    let d = set.dim;
    let b = idx.len();
    let s = batch_summaries(post, g, p, set, idx, training, dropout)?;
    match atoms {
        None => {
            let mut u = Vec::with_capacity(b * d);
            for &i in idx {
                u.extend_from_slice(&set.us[i * d..(i + 1) * d]);
            }
            let uv = g.input(u, &[b, d])?;
            let lq = post.flow.log_prob(g, p, uv, s)?;
            let m = g.mean(lq);
            Ok(g.scale(m, -1.0))
        }
        Some(k) => {
            if k > b {
                return Err(Error::InvalidArgument(format!(
                    "{k} atoms exceed batch size {b}"
                )));
            }
            let mut rows = Vec::with_capacity(b * k);
            let mut u = Vec::with_capacity(b * k * d);
            let mut offsets = Vec::with_capacity(b * k);
            for (pos, &i) in idx.iter().enumerate() {
                let mut members = vec![pos];
                members.extend(
                    sample_indices(atom_rng, b - 1, k - 1)
                        .into_iter()
                        .map(|j| if j >= pos { j + 1 } else { j }),
                );
                for m in members {
                    let j = idx[m];
                    rows.push(pos);
                    u.extend_from_slice(&set.us[j * d..(j + 1) * d]);
                    offsets.push(set.offsets[j]);
                }
                debug_assert_eq!(idx[pos], i);
            }
            let s_rep = g.gather_rows(s, &rows)?;
            let uv = g.input(u, &[b * k, d])?;
            let lq = post.flow.log_prob(g, p, uv, s_rep)?;
            atomic_nll(g, lq, &offsets, k)
        }
    }
}

/// Per-round diagnostics; deterministic given the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub simulations: usize,
    pub cumulative_simulations: usize,
    pub dataset_size: usize,
    pub attempts: usize,
    pub invalid: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub learning_rate: f64,
    pub restarted: bool,
}

/// Wall-clock per phase, kept apart from the reproducible report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub round: usize,
    pub simulate_secs: f64,
    pub train_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SnpeRun {
    /// Posterior after each round; the last one is the final estimate.
    pub checkpoints: Vec<Posterior>,
    pub rounds: Vec<RoundReport>,
    pub timings: Vec<RoundTiming>,
}

impl SnpeRun {
    pub fn posterior(&self) -> &Posterior {
        self.checkpoints.last().expect("at least one round")
    }
}

struct EpochLog {
    epochs: usize,
    best_epoch: usize,
    train: Vec<f64>,
    validation: Vec<f64>,
}

fn global_clip(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= c);
    }
}

/// Splits `items` into batches of `size`; a final batch smaller than `min`
/// is merged into its predecessor.
fn batches(items: &[usize], size: usize, min: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = items.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min) {
        let n = out.len();
        let start = (n - 2) * size;
        out.truncate(n - 2);
        out.push(&items[start..]);
    }
    out
}

fn train_round(
    post: &mut Posterior,
    set: &TrainingSet,
    round: usize,
    cfg: &SnpeConfig,
    lr: f64,
) -> Result<EpochLog> {
    let atoms = (round > 1).then_some(cfg.atoms);
    let min_batch = atoms.unwrap_or(1);
    let seed = cfg.seed;
    let r = round as u64;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng::stream(seed, r, purpose::SPLIT));
    let n_val = cfg.validation_size(set.len());
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let val_batches = batches(val, cfg.batch_size, min_batch);

    let mut shuffle = rng::stream(seed, r, purpose::SHUFFLE);
    let mut atom_rng = rng::stream(seed, r, purpose::ATOMS);
    let mut dropout = rng::stream(seed, r, purpose::DROPOUT);
    let adam = Adam::with_lr(lr);
    post.store.reset_optimizer();

    let validate = |post: &Posterior| -> Result<f64> {
        let mut vr = rng::stream(seed, r, purpose::VALIDATION);
        // dropout is off during validation; this stream is never drawn from
        let mut idle = rng::stream(seed, r, purpose::DROPOUT);
        let mut total = 0.0;
        for b in &val_batches {
            let mut g = Graph::new();
            let p = g.bind(&post.store);
            let l = batch_loss(post, &mut g, &p, set, b, atoms, false, &mut vr, &mut idle)?;
            total += g.scalar(l) * b.len() as f64;
        }
        Ok(total / val.len() as f64)
    };

    let mut log = EpochLog {
        epochs: 0,
        best_epoch: 0,
        train: Vec::new(),
        validation: Vec::new(),
    };
    let mut best = (f64::INFINITY, post.store.clone());
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        train.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut count = 0;
        for b in batches(&train, cfg.batch_size, min_batch) {
            let mut g = Graph::new();
            let p = g.bind(&post.store);
            let l = batch_loss(
                post,
                &mut g,
                &p,
                set,
                b,
                atoms,
                true,
                &mut atom_rng,
                &mut dropout,
            )?;
            let value = g.scalar(l);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { round });
            }
            g.backward(l)?;
            let mut grads = g.param_grads(&p, &post.store);
            if let Some(c) = cfg.clip_norm {
                global_clip(&mut grads, c);
            }
            adam.step(&mut post.store, &grads)?;
            sum += value * b.len() as f64;
            count += b.len();
        }
        let v = validate(post)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { round });
        }
        log.epochs = epoch;
        log.train.push(sum / count as f64);
        log.validation.push(v);
        if v < best.0 {
            best = (v, post.store.clone());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    post.store = best.1;
    Ok(log)
}

/// Valid simulations of one round plus the bookkeeping of replaced runs.
pub struct Simulated {
    pub thetas: Vec<ParamPoint>,
    pub series: Vec<TimeSeries>,
    pub attempts: usize,
    pub invalid: usize,
}

/// Draws `n` parameters from `propose`, simulates them and replaces every
/// invalid run, aborting once the invalid fraction exceeds the limit.
/// Constant series count as invalid because their autocorrelation is undefined.
pub fn simulate_round<F>(
    model: Model,
    n_s: usize,
    n: usize,
    round: usize,
    cfg: &SnpeConfig,
    mut propose: F,
) -> Result<Simulated>
where
    F: FnMut(usize) -> Result<Vec<ParamPoint>>,
{
    let mut out = Simulated {
        thetas: Vec::with_capacity(n),
        series: Vec::with_capacity(n),
        attempts: 0,
        invalid: 0,
    };
    while out.thetas.len() < n {
        let need = n - out.thetas.len();
        let thetas = propose(need)?;
        let items = simulate_batch(
            model,
            &thetas,
            n_s,
            cfg.seed,
            round as u64,
            out.attempts as u64,
        )?;
        out.attempts += need;
        for item in items {
            match item.series {
                Some(x) if x.values().iter().any(|&v| v != x.values()[0]) => {
                    out.thetas.push(item.theta);
                    out.series.push(x);
                }
                _ => out.invalid += 1,
            }
        }
        if out.invalid as f64 > cfg.max_invalid_fraction * out.attempts as f64 {
            return Err(Error::TooManyInvalid {
                round,
                invalid: out.invalid,
                attempts: out.attempts,
                limit: 100.0 * cfg.max_invalid_fraction,
            });
        }
    }
    Ok(out)
}

/// Runs the full multi-round procedure for observation `x0`.
pub fn run_snpe(
    model: Model,
    prior: &BoxPrior,
    spec: ExtractorSpec,
    x0: &TimeSeries,
    cfg: &SnpeConfig,
) -> Result<SnpeRun> {
    cfg.validate()?;
    let n_s = x0.len();
    let mut post = Posterior::new(model, prior.clone(), n_s, spec, cfg.seed)?;
    let mut set = TrainingSet::new(prior.dim(), n_s, spec.n_f());
    let mut run = SnpeRun {
        checkpoints: Vec::with_capacity(cfg.rounds),
        rounds: Vec::with_capacity(cfg.rounds),
        timings: Vec::with_capacity(cfg.rounds),
    };
    for round in 1..=cfg.rounds {
        let t0 = Instant::now();
        let mut proposal_rng = rng::stream(cfg.seed, round as u64, purpose::PROPOSAL);
        let sims = if round == 1 {
            simulate_round(model, n_s, cfg.sims_per_round, round, cfg, |n| {
                Ok((0..n).map(|_| prior.sample(&mut proposal_rng)).collect())
            })?
        } else {
            let s0 = post.summary(x0.values())?;
            simulate_round(model, n_s, cfg.sims_per_round, round, cfg, |n| {
                post.sample_given_summary(&s0, n, &mut proposal_rng)
            })?
        };
        let refs: Vec<&[f64]> = sims.series.iter().map(|x| x.values()).collect();
        let fixed = match spec {
            ExtractorSpec::Autocorr { .. } => Some(post.raw_features(&refs)?),
            ExtractorSpec::Yulenet(_) => None,
        };
        if round == 1 {
            let raw = match &fixed {
                Some(f) => f.clone(),
                None => post.raw_features(&refs)?,
            };
            post.standardizer = Standardizer::fit(&raw, spec.n_f())?;
        }
        let n_f = spec.n_f();
        for (i, (theta, x)) in sims.thetas.iter().zip(&sims.series).enumerate() {
            let f = fixed.as_ref().map(|f| &f[i * n_f..(i + 1) * n_f]);
            set.push(prior, theta.coords(), x.values(), f)?;
        }
        let simulate_secs = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        if cfg.retrain_from_scratch && round > 1 {
            let fresh = Posterior::initialized(
                model,
                prior.clone(),
                n_s,
                spec,
                &mut rng::stream(cfg.seed, round as u64, purpose::INIT),
            )?;
            post.store = fresh.store;
        }
        let start = post.store.clone();
        let mut lr = cfg.learning_rate;
        let mut restarted = false;
        let log = match train_round(&mut post, &set, round, cfg, lr) {
            Ok(log) => log,
            Err(e) if e.is_numeric() => {
                post.store = start;
                lr *= 0.5;
                restarted = true;
                train_round(&mut post, &set, round, cfg, lr).map_err(|e| {
                    if e.is_numeric() {
                        Error::NonFiniteLoss { round }
                    } else {
                        e
                    }
                })?
            }
            Err(e) => return Err(e),
        };
        post.round = round;
        run.timings.push(RoundTiming {
            round,
            simulate_secs,
            train_secs: t1.elapsed().as_secs_f64(),
        });
        run.rounds.push(RoundReport {
            round,
            simulations: cfg.sims_per_round,
            cumulative_simulations: round * cfg.sims_per_round,
            dataset_size: set.len(),
            attempts: sims.attempts,
            invalid: sims.invalid,
            epochs: log.epochs,
            best_epoch: log.best_epoch,
            train_loss: log.train,
            validation_loss: log.validation,
            learning_rate: lr,
            restarted,
        });
        run.checkpoints.push(post.clone());
    }
    Ok(run)
}
