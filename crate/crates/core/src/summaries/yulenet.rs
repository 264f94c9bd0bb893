//! The YuleNet summary extractor.
//!
//! ```text
//! g1: conv1d(1 → 8, k = 64, stride 1, pad 32) → ReLU → avgpool(16)
//! g2: conv1d(8 → 8, k = 64, stride 1, pad 32) → ReLU → avgpool(w2)
//! g3: dropout(0.5) → flatten → linear(→ n_f) → ReLU
//! ```
//!
//! `w2` is 16 by default ([`SecondPool::Sixteen`]), which makes the flatten
//! width `n_s / 32` and the parameter count `4624 + n_f (1 + n_s / 32)` for
//! every `n_s` that is a multiple of 256. [`SecondPool::LengthScaled`] uses
//! `⌊n_s / 256⌋` instead, which fixes the flatten width at 128; both agree at
//! `n_s = 4096`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Graph, ParamId, ParameterStore, Var, fan_in_uniform, kaiming_uniform};

/// Name prefix reserved for YuleNet arrays in a shared store.
pub const PREFIX: &str = "yulenet.";

const CHANNELS: usize = 8;
const KERNEL: usize = 64;
const PADDING: usize = 32;
const POOL1: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SecondPool {
    #[default]
    Sixteen,
    LengthScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YuleNetConfig {
    pub n_s: usize,
    pub n_f: usize,
    #[serde(default)]
    pub second_pool: SecondPool,
    pub dropout: f64,
}

impl YuleNetConfig {
    pub fn new(n_s: usize, n_f: usize) -> Self {
        Self {
            n_s,
            n_f,
            second_pool: SecondPool::default(),
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s <= 256 {
            return Err(Error::InvalidArgument(format!(
                "YuleNet needs n_s > 256, got {}",
                self.n_s
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn conv1_len(&self) -> usize {
        self.n_s + 2 * PADDING - KERNEL + 1
    }

    fn pool1_len(&self) -> usize {
        self.conv1_len() / POOL1
    }

    fn conv2_len(&self) -> usize {
        self.pool1_len() + 2 * PADDING - KERNEL + 1
    }

    pub fn pool2_window(&self) -> usize {
        match self.second_pool {
            SecondPool::Sixteen => 16,
            SecondPool::LengthScaled => (self.n_s / 256).max(1),
        }
    }

    /// Width of the flattened `g2` output feeding the linear head.
    pub fn flatten_dim(&self) -> usize {
        CHANNELS * (self.conv2_len() / self.pool2_window())
    }

    /// Exact trainable scalar count of the architecture.
    pub fn param_count(&self) -> usize {
        (CHANNELS * KERNEL + CHANNELS)
            + (CHANNELS * CHANNELS * KERNEL + CHANNELS)
            + (self.flatten_dim() + 1) * self.n_f
    }

    /// Multiply-accumulates of one forward pass (convolutions and the linear
    /// head; pooling and activations are not counted).
    pub fn mac_count(&self) -> usize {
        self.conv1_len() * KERNEL * CHANNELS
            + self.conv2_len() * KERNEL * CHANNELS * CHANNELS
            + self.flatten_dim() * self.n_f
    }
}

/// The published closed form `4624 + n_f (1 + n_s / 32)`.
pub fn closed_form_params(n_s: usize, n_f: usize) -> usize {
    4624 + n_f * (1 + n_s / 32)
}

/// MACs of the default architecture for `(n_s, n_f)`.
pub fn count_macs(n_s: usize, n_f: usize) -> usize {
    YuleNetConfig::new(n_s, n_f).mac_count()
}

/// Trainable YuleNet scalars present in `store`.
pub fn count_params(store: &ParameterStore) -> usize {
    store.scalar_count_with_prefix(PREFIX)
}

#[derive(Debug, Clone)]
pub struct YuleNet {
    cfg: YuleNetConfig,
    g1_w: ParamId,
    g1_b: ParamId,
    g2_w: ParamId,
    g2_b: ParamId,
    g3_w: ParamId,
    g3_b: ParamId,
}

impl YuleNet {
    /// Registers freshly initialized parameters in `store`.
    pub fn new<R: Rng + ?Sized>(
        cfg: YuleNetConfig,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let flat = cfg.flatten_dim();
        let (f1, f2) = (KERNEL, CHANNELS * KERNEL);
        let g1_w = store.add(
            format!("{PREFIX}g1.weight"),
            &[CHANNELS, 1, KERNEL],
            kaiming_uniform(CHANNELS * KERNEL, f1, rng),
        )?;
        let g1_b = store.add(
            format!("{PREFIX}g1.bias"),
            &[CHANNELS],
            fan_in_uniform(CHANNELS, f1, rng),
        )?;
        let g2_w = store.add(
            format!("{PREFIX}g2.weight"),
            &[CHANNELS, CHANNELS, KERNEL],
            kaiming_uniform(CHANNELS * CHANNELS * KERNEL, f2, rng),
        )?;
        let g2_b = store.add(
            format!("{PREFIX}g2.bias"),
            &[CHANNELS],
            fan_in_uniform(CHANNELS, f2, rng),
        )?;
        let g3_w = store.add(
            format!("{PREFIX}g3.weight"),
            &[cfg.n_f, flat],
            kaiming_uniform(cfg.n_f * flat, flat, rng),
        )?;
        let g3_b = store.add(
            format!("{PREFIX}g3.bias"),
            &[cfg.n_f],
            fan_in_uniform(cfg.n_f, flat, rng),
        )?;
        Ok(Self {
            cfg,
            g1_w,
            g1_b,
            g2_w,
            g2_b,
            g3_w,
            g3_b,
        })
    }

    /// Re-binds to arrays already present in `store` (e.g. a loaded checkpoint).
    pub fn attach(cfg: YuleNetConfig, store: &ParameterStore) -> Result<Self> {
        cfg.validate()?;
        let find = |suffix: &str, shape: &[usize]| -> Result<ParamId> {
            let name = format!("{PREFIX}{suffix}");
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
        };
        Ok(Self {
            cfg,
            g1_w: find("g1.weight", &[CHANNELS, 1, KERNEL])?,
            g1_b: find("g1.bias", &[CHANNELS])?,
            g2_w: find("g2.weight", &[CHANNELS, CHANNELS, KERNEL])?,
            g2_b: find("g2.bias", &[CHANNELS])?,
            g3_w: find("g3.weight", &[cfg.n_f, cfg.flatten_dim()])?,
            g3_b: find("g3.bias", &[cfg.n_f])?,
        })
    }

    pub fn config(&self) -> &YuleNetConfig {
        &self.cfg
    }

    /// `x: [B, 1, n_s]` → `[B, n_f]`, elementwise non-negative.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let batch = g.shape(x)[0];
        if g.shape(x) != [batch, 1, self.cfg.n_s] {
            return Err(Error::shape(
                "yulenet",
                format!(
                    "length: input {:?}, expected [B, 1, {}]",
                    g.shape(x),
                    self.cfg.n_s
                ),
            ));
        }
        let h = g.conv1d(x, p.get(self.g1_w), p.get(self.g1_b), 1, PADDING)?;
        let h = g.relu(h);
        let h = g.avgpool1d(h, POOL1)?;
        let h = g.conv1d(h, p.get(self.g2_w), p.get(self.g2_b), 1, PADDING)?;
        let h = g.relu(h);
        let h = g.avgpool1d(h, self.cfg.pool2_window())?;
        let flat = g.reshape(h, &[batch, self.cfg.flatten_dim()])?;
        let h = g.dropout(flat, self.cfg.dropout, training, rng)?;
        let h = g.linear(h, p.get(self.g3_w), p.get(self.g3_b), None)?;
        Ok(g.relu(h))
    }

    /// Stacks raw series into a `[B, 1, n_s]` input and runs [`forward`](Self::forward).
    pub fn forward_series<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        series: &[&[f64]],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if let Some(bad) = series.iter().find(|s| s.len() != self.cfg.n_s) {
            return Err(Error::shape(
                "yulenet",
                format!(
                    "length: series of length {}, expected {}",
                    bad.len(),
                    self.cfg.n_s
                ),
            ));
        }
        let data = series.concat();
        let x = g.input(data, &[series.len(), 1, self.cfg.n_s])?;
        self.forward(g, p, x, training, rng)
    }
}
