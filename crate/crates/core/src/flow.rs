//! Conditional masked autoregressive flow `q(u | s)` over unconstrained
//! parameters `u`.
//!
//! Each block is a MADE with ReLU hidden layers. The conditioner `s` is
//! concatenated to the input of every masked layer and is always connected.
//! A block maps `x → z = (x − μ(x, s)) ⊙ exp(−α(x, s))`, where `μ_i, α_i`
//! depend on `x` only through the coordinates preceding `i` in the block's
//! order. Blocks are chained data → base, so
//! `log q(u | s) = log N(z_B; 0, I) − Σ_b Σ_i α_{b,i}`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Graph, ParamId, ParameterStore, Var, fan_in_uniform, kaiming_uniform};

/// Name prefix reserved for flow arrays in a shared store.
pub const PREFIX: &str = "flow.";

/// Bound applied to every log-scale head before exponentiation.
pub const LOG_SCALE_CLAMP: f64 = 7.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Rows evaluated per graph when sampling or scoring large batches.
const CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl FlowConfig {
    /// Five blocks of two 50-unit hidden layers.
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            blocks: 5,
            hidden: 50,
            hidden_layers: 2,
        }
    }

    /// Autoregressive order of block `b`: natural for even `b`, reversed for odd.
    pub fn order(&self, b: usize) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.dim).collect();
        if b % 2 == 1 {
            o.reverse();
        }
        o
    }
}

#[derive(Debug, Clone)]
struct MaskedLayer {
    w: ParamId,
    b: ParamId,
    mask: Arc<[f64]>,
}

#[derive(Debug, Clone)]
struct Made {
    order: Vec<usize>,
    layers: Vec<MaskedLayer>,
}

#[derive(Debug, Clone)]
pub struct ConditionalFlow {
    cfg: FlowConfig,
    blocks: Vec<Made>,
}

/// Mask of shape `[out, in_main + cond]`; conditioner columns are all ones.
fn build_mask(out_deg: &[usize], in_deg: &[usize], cond: usize, strict: bool) -> Arc<[f64]> {
    let width = in_deg.len() + cond;
    let mut m = vec![0.0; out_deg.len() * width];
    for (o, &d_out) in out_deg.iter().enumerate() {
        let row = &mut m[o * width..(o + 1) * width];
        for (i, &d_in) in in_deg.iter().enumerate() {
            let connected = if strict { d_out > d_in } else { d_out >= d_in };
            row[i] = if connected { 1.0 } else { 0.0 };
        }
        row[in_deg.len()..].fill(1.0);
    }
    m.into()
}

/// Degrees `(input, hidden)` for one block. Input `i` has degree equal to its
/// 1-based rank in `order`; hidden units cycle through `1..dim`.
fn degrees(cfg: &FlowConfig, order: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = vec![0; cfg.dim];
    for (rank, &i) in order.iter().enumerate() {
        input[i] = rank + 1;
    }
    let hidden = (0..cfg.hidden)
        .map(|k| {
            if cfg.dim > 1 {
                k % (cfg.dim - 1) + 1
            } else {
                0
            }
        })
        .collect();
    (input, hidden)
}

impl ConditionalFlow {
    /// Registers freshly initialized parameters; output heads start at zero so
    /// the flow is the identity map.
    pub fn new<R: Rng + ?Sized>(
        cfg: FlowConfig,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(cfg, |name, shape, fan_in, zero| {
            let n: usize = shape.iter().product();
            let data = if zero {
                vec![0.0; n]
            } else if shape.len() == 2 {
                kaiming_uniform(n, fan_in, rng)
            } else {
                fan_in_uniform(n, fan_in, rng)
            };
            store.add(name, shape, data)
        })
    }

    /// Re-binds to arrays already present in `store`.
    pub fn attach(cfg: FlowConfig, store: &ParameterStore) -> Result<Self> {
        Self::build(cfg, |name, shape, _, _| {
            let id = store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
            if store.get(id).shape != shape {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    store.get(id).shape
                )));
            }
            Ok(id)
        })
    }

    fn build<F>(cfg: FlowConfig, mut param: F) -> Result<Self>
    where
        F: FnMut(String, &[usize], usize, bool) -> Result<ParamId>,
    {
        if cfg.dim == 0 || cfg.blocks == 0 || cfg.hidden == 0 || cfg.hidden_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate flow configuration {cfg:?}"
            )));
        }
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let order = cfg.order(b);
            let (in_deg, hid_deg) = degrees(&cfg, &order);
            let mut layers = Vec::with_capacity(cfg.hidden_layers + 1);
            let mut prev = in_deg.clone();
            for l in 0..=cfg.hidden_layers {
                let head = l == cfg.hidden_layers;
                let out_deg: Vec<usize> = if head {
                    in_deg.iter().chain(&in_deg).copied().collect()
                } else {
                    hid_deg.clone()
                };
                let n_in = prev.len() + cfg.cond_dim;
                let name = format!("{PREFIX}block{b}.layer{l}");
                let w = param(format!("{name}.weight"), &[out_deg.len(), n_in], n_in, head)?;
                let bias = param(format!("{name}.bias"), &[out_deg.len()], n_in, head)?;
                layers.push(MaskedLayer {
                    w,
                    b: bias,
                    mask: build_mask(&out_deg, &prev, cfg.cond_dim, head),
                });
                prev = out_deg;
            }
            blocks.push(Made { order, layers });
        }
        Ok(Self { cfg, blocks })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    /// Block orders, for checkpoint metadata.
    pub fn orders(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.order.clone()).collect()
    }

    /// `(μ, α)` of block `b`, each `[M, dim]`, with `α` clamped.
    fn block_heads(
        &self,
        g: &mut Graph,
        p: &Bound,
        b: usize,
        x: Var,
        s: Var,
    ) -> Result<(Var, Var)> {
        let made = &self.blocks[b];
        let mut h = x;
        for (l, layer) in made.layers.iter().enumerate() {
            let inp = if self.cfg.cond_dim > 0 {
                g.concat_cols(h, s)?
            } else {
                h
            };
            h = g.linear(
                inp,
                p.get(layer.w),
                p.get(layer.b),
                Some(layer.mask.clone()),
            )?;
            if l + 1 < made.layers.len() {
                h = g.relu(h);
            }
        }
        let d = self.cfg.dim;
        let mu = g.slice_cols(h, 0, d)?;
        let raw = g.slice_cols(h, d, d)?;
        Ok((mu, g.clamp(raw, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)))
    }

    fn check_inputs(&self, g: &Graph, u: Var, s: Var) -> Result<usize> {
        let rows = g.shape(u).first().copied().unwrap_or(0);
        if g.shape(u) != [rows, self.cfg.dim] || g.shape(s) != [rows, self.cfg.cond_dim] {
            return Err(Error::shape(
                "flow",
                format!(
                    "inputs {:?} and {:?}, expected [M, {}] and [M, {}]",
                    g.shape(u),
                    g.shape(s),
                    self.cfg.dim,
                    self.cfg.cond_dim
                ),
            ));
        }
        Ok(rows)
    }

    /// Data → base pass: returns `(z [M, dim], Σ log|det| [M])`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, u: Var, s: Var) -> Result<(Var, Var)> {
        self.check_inputs(g, u, s)?;
        let mut x = u;
        let mut logdet: Option<Var> = None;
        for b in 0..self.blocks.len() {
            let (mu, alpha) = self.block_heads(g, p, b, x, s)?;
            let centered = g.sub(x, mu)?;
            let neg = g.scale(alpha, -1.0);
            let inv_scale = g.exp(neg);
            x = g.mul(centered, inv_scale)?;
            let ld = g.sum_cols(neg)?;
            logdet = Some(match logdet {
                Some(acc) => g.add(acc, ld)?,
                None => ld,
            });
            if g.value(x).iter().any(|v| !v.is_finite()) {
                return Err(Error::FlowNonFinite { block: b });
            }
        }
        Ok((x, logdet.expect("at least one block")))
    }

    /// `log q(u | s)` per row, shape `[M]`; differentiable in parameters, `u` and `s`.
    pub fn log_prob(&self, g: &mut Graph, p: &Bound, u: Var, s: Var) -> Result<Var> {
        let (z, logdet) = self.forward(g, p, u, s)?;
        let sq = g.square(z);
        let ss = g.sum_cols(sq)?;
        let base = g.scale(ss, -0.5);
        let base = g.add_scalar(base, -(self.cfg.dim as f64) * HALF_LN_2PI);
        g.add(base, logdet)
    }

    /// Value-only `log q(u | s)` for row-major `u [M, dim]` and `s [M, cond_dim]`.
    pub fn log_prob_values(
        &self,
        store: &ParameterStore,
        u: &[f64],
        s: &[f64],
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(u.len() / self.cfg.dim);
        self.for_chunks(u, s, |uc, sc, rows| {
            let mut g = Graph::new();
            let p = g.bind(store);
            let (uv, sv) = self.leaves(&mut g, uc, sc, rows)?;
            let lp = self.log_prob(&mut g, &p, uv, sv)?;
            out.extend_from_slice(g.value(lp));
            Ok(())
        })?;
        Ok(out)
    }

    /// Value-only data → base map; returns `(z, logdet)`.
    pub fn transform_values(
        &self,
        store: &ParameterStore,
        u: &[f64],
        s: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut z = Vec::with_capacity(u.len());
        let mut logdet = Vec::with_capacity(u.len() / self.cfg.dim);
        self.for_chunks(u, s, |uc, sc, rows| {
            let mut g = Graph::new();
            let p = g.bind(store);
            let (uv, sv) = self.leaves(&mut g, uc, sc, rows)?;
            let (zv, ld) = self.forward(&mut g, &p, uv, sv)?;
            z.extend_from_slice(g.value(zv));
            logdet.extend_from_slice(g.value(ld));
            Ok(())
        })?;
        Ok((z, logdet))
    }

    /// Base → data map, inverting each block one coordinate at a time in
    /// its autoregressive order.
    pub fn inverse_values(&self, store: &ParameterStore, z: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let d = self.cfg.dim;
        let mut out = Vec::with_capacity(z.len());
        self.for_chunks(z, s, |zc, sc, rows| {
            let mut y = zc.to_vec();
            for b in (0..self.blocks.len()).rev() {
                let mut x = vec![0.0; rows * d];
                for &i in &self.blocks[b].order {
                    let mut g = Graph::new();
                    let p = g.bind(store);
                    let (xv, sv) = self.leaves(&mut g, &x, sc, rows)?;
                    let (mu, alpha) = self.block_heads(&mut g, &p, b, xv, sv)?;
                    let (mu, alpha) = (g.value(mu), g.value(alpha));
                    for r in 0..rows {
                        let k = r * d + i;
                        x[k] = y[k] * alpha[k].exp() + mu[k];
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::FlowNonFinite { block: b });
                }
                y = x;
            }
            out.extend_from_slice(&y);
            Ok(())
        })?;
        Ok(out)
    }

    /// `count` draws from `q(· | s)` for a single conditioner `s`, row-major
    /// `[count, dim]` in unconstrained space.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        store: &ParameterStore,
        s: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::InvalidArgument(
                "sample count must be at least 1".into(),
            ));
        }
        if s.len() != self.cfg.cond_dim {
            return Err(Error::shape(
                "flow",
                format!(
                    "conditioner has {} entries, expected {}",
                    s.len(),
                    self.cfg.cond_dim
                ),
            ));
        }
        let z: Vec<f64> = (0..count * self.cfg.dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let cond = s.repeat(count);
        self.inverse_values(store, &z, &cond)
    }

    fn leaves(&self, g: &mut Graph, u: &[f64], s: &[f64], rows: usize) -> Result<(Var, Var)> {
        let uv = g.input(u.to_vec(), &[rows, self.cfg.dim])?;
        let sv = g.input(s.to_vec(), &[rows, self.cfg.cond_dim])?;
        Ok((uv, sv))
    }

    fn for_chunks<F>(&self, u: &[f64], s: &[f64], mut f: F) -> Result<()>
    where
        F: FnMut(&[f64], &[f64], usize) -> Result<()>,
    {
        let (d, c) = (self.cfg.dim, self.cfg.cond_dim);
        let rows = u.len() / d;
        if u.len() != rows * d || s.len() != rows * c {
            return Err(Error::shape(
                "flow",
                format!(
                    "{} parameter values and {} conditioner values",
                    u.len(),
                    s.len()
                ),
            ));
        }
        let mut start = 0;
        while start < rows {
            let n = CHUNK.min(rows - start);
            f(
                &u[start * d..(start + n) * d],
                &s[start * c..(start + n) * c],
                n,
            )?;
            start += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    pub(crate) fn random_flow(
        dim: usize,
        cond: usize,
        seed: u64,
        head_sd: f64,
    ) -> (ConditionalFlow, ParameterStore) {
        let mut store = ParameterStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let flow = ConditionalFlow::new(FlowConfig::new(dim, cond), &mut store, &mut r).unwrap();
        let normal = Normal::new(0.0, head_sd).unwrap();
        for (id, _) in store.clone().iter() {
            if store
                .get(id)
                .name
                .contains(&format!("layer{}", flow.cfg.hidden_layers))
            {
                store
                    .get_mut(id)
                    .data
                    .iter_mut()
                    .for_each(|v| *v = r.sample(normal));
            }
        }
        (flow, store)
    }

    #[test]
    fn identity_at_initialization() {
        let mut store = ParameterStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let flow = ConditionalFlow::new(FlowConfig::new(2, 5), &mut store, &mut r).unwrap();
        let u: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) * 0.37).collect();
        let s: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let lp = flow.log_prob_values(&store, &u, &s).unwrap();
        for (row, l) in u.chunks(2).zip(&lp) {
            let expect = -0.5 * (row[0] * row[0] + row[1] * row[1]) - 2.0 * HALF_LN_2PI;
            assert!((l - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn orders_alternate() {
        let cfg = FlowConfig::new(3, 1);
        assert_eq!(cfg.order(0), vec![0, 1, 2]);
        assert_eq!(cfg.order(1), vec![2, 1, 0]);
        assert_eq!(cfg.order(4), vec![0, 1, 2]);
    }

    #[test]
    fn heads_respect_autoregressive_order() {
        let (flow, store) = random_flow(3, 2, 1, 0.5);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let s = vec![0.3, -0.8];
        let heads = |b: usize, x: &[f64]| {
            let mut g = Graph::new();
            let p = g.bind(&store);
            let (xv, sv) = flow.leaves(&mut g, x, &s, 1).unwrap();
            let (mu, alpha) = flow.block_heads(&mut g, &p, b, xv, sv).unwrap();
            (g.value(mu).to_vec(), g.value(alpha).to_vec())
        };
        for b in 0..flow.cfg.blocks {
            let order = &flow.blocks[b].order;
            let rank = |i: usize| order.iter().position(|&o| o == i).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
                let base = heads(b, &x);
                for j in 0..3 {
                    let mut y = x.clone();
                    y[j] += r.random_range(0.5..3.0);
                    let moved = heads(b, &y);
                    for i in 0..3 {
                        if rank(i) <= rank(j) {
                            assert_eq!(base.0[i], moved.0[i], "block {b}: μ_{i} moved with x_{j}");
                            assert_eq!(base.1[i], moved.1[i], "block {b}: α_{i} moved with x_{j}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conditioner_reaches_every_head() {
        let (flow, store) = random_flow(2, 3, 3, 0.5);
        let u = [0.2, -0.4];
        let a = flow.log_prob_values(&store, &u, &[0.0, 0.0, 0.0]).unwrap()[0];
        let b = flow.log_prob_values(&store, &u, &[1.0, 0.0, 0.0]).unwrap()[0];
        assert!((a - b).abs() > 1e-6);
    }

    #[test]
    fn inverse_round_trip() {
        let (flow, store) = random_flow(2, 4, 4, 0.05);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let rows = 500;
        let z: Vec<f64> = (0..rows * 2).map(|_| r.sample(StandardNormal)).collect();
        let s: Vec<f64> = (0..rows * 4).map(|_| r.random_range(-2.0..2.0)).collect();
        let u = flow.inverse_values(&store, &z, &s).unwrap();
        let (back, _) = flow.transform_values(&store, &u, &s).unwrap();
        let worst = z
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn attach_and_shape_errors() {
        let (flow, store) = random_flow(2, 5, 6, 0.1);
        let again = ConditionalFlow::attach(flow.cfg.clone(), &store).unwrap();
        let u = [0.1, 0.2];
        let s = [0.0; 5];
        assert_eq!(
            flow.log_prob_values(&store, &u, &s).unwrap(),
            again.log_prob_values(&store, &u, &s).unwrap()
        );
        assert!(ConditionalFlow::attach(FlowConfig::new(2, 4), &store).is_err());
        assert!(flow.log_prob_values(&store, &u, &s[..4]).is_err());
        assert!(
            flow.sample(&store, &s, 0, &mut ChaCha8Rng::seed_from_u64(0))
                .is_err()
        );
    }

    #[test]
    fn non_finite_input_names_the_block() {
        let (flow, store) = random_flow(2, 1, 7, 0.1);
        let err = flow
            .log_prob_values(&store, &[f64::NAN, 0.0], &[0.0])
            .unwrap_err();
        assert!(matches!(err, Error::FlowNonFinite { block: 0 }), "{err}");
    }
}
