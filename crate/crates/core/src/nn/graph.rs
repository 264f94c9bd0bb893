//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] is a Wengert list: every operation appends a node holding its
//! forward value, and [`Graph::backward`] walks the list once in reverse.
//! Tensors are row-major `f64` buffers. Batched layers use the leading axis as
//! the batch axis (`[B, C, L]` for convolutions, `[B, F]` for dense layers).
//!
//! A graph supports exactly one backward pass; a second call returns
//! [`Error::BackwardTwice`]. Build a fresh graph per minibatch.

use std::sync::Arc;

use rand::Rng;

use super::kernels;
use super::store::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `y[r, c] = (x[r, c] - shift[c]) * scale[c]`
    AffineCols {
        x: Var,
        scale: Arc<[f64]>,
    },
    Exp(Var),
    Square(Var),
    Relu(Var),
    Tanh(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    AvgPool1d {
        x: Var,
        window: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        mask: Option<Arc<[f64]>>,
    },
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        rows: Arc<[usize]>,
    },
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    LogSumExpRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Parameter handles produced by [`Graph::bind`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the strides
    // describe row-major (or transposed row-major) layouts within them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Copies `[c, len]` rows into `[c, len + 2·padding]` with zero margins.
fn pad_rows(x: &[f64], len: usize, padding: usize, out: &mut [f64]) {
    let plen = len + 2 * padding;
    for (src, dst) in x.chunks_exact(len).zip(out.chunks_exact_mut(plen)) {
        dst[..padding].fill(0.0);
        dst[padding..padding + len].copy_from_slice(src);
        dst[padding + len..].fill(0.0);
    }
}

/// Unfolds one `[c_in, len]` signal into `[c_in * k, out_len]` patch columns.
fn im2col(
    x: &[f64],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
    col: &mut [f64],
) {
    for ci in 0..c_in {
        let row = &x[ci * len..(ci + 1) * len];
        for j in 0..k {
            let dst = &mut col[(ci * k + j) * out_len..(ci * k + j + 1) * out_len];
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = (t * stride + j) as isize - padding as isize;
                *d = if pos >= 0 && (pos as usize) < len {
                    row[pos as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(
    col: &[f64],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
    gx: &mut [f64],
) {
    for ci in 0..c_in {
        let row = &mut gx[ci * len..(ci + 1) * len];
        for j in 0..k {
            let src = &col[(ci * k + j) * out_len..(ci * k + j + 1) * out_len];
            for (t, s) in src.iter().enumerate() {
                let pos = (t * stride + j) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    row[pos as usize] += s;
                }
            }
        }
    }
}

fn masked_weight(w: &[f64], mask: &Option<Arc<[f64]>>) -> Vec<f64> {
    match mask {
        Some(m) => w.iter().zip(m.iter()).map(|(a, b)| a * b).collect(),
        None => w.to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Gradient of the backward root with respect to `v`, if `v` took part in it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf(data, shape, false)
    }

    /// Input whose gradient is tracked (used by gradient checks and for
    /// derivatives with respect to data).
    pub fn input_with_grad(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf(data, shape, true)
    }

    fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if data.len() != numel(shape) {
            return Err(Error::shape(
                "input",
                format!("{} values for shape {:?}", data.len(), shape),
            ));
        }
        Ok(self.push(data, shape.to_vec(), Op::Input, requires_grad))
    }

    /// Copies every array of `store` into the graph as a trainable leaf.
    pub fn bind(&mut self, store: &ParameterStore) -> Bound {
        let vars = store
            .iter()
            .map(|(_, entry)| self.push(entry.data.clone(), entry.shape.clone(), Op::Param, true))
            .collect();
        Bound(vars)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("left {:?} vs right {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(value, shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, self.shape(a).to_vec(), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, self.shape(a).to_vec(), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, self.shape(a).to_vec(), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// Column-wise standardization `(x - shift) * scale` of a `[rows, cols]` tensor
    /// with constant per-column coefficients.
    pub fn affine_cols(&mut self, x: Var, shift: &[f64], scale: &[f64]) -> Result<Var> {
        let (rows, cols) = self.dims2("affine_cols", x)?;
        if shift.len() != cols || scale.len() != cols {
            return Err(Error::shape(
                "affine_cols",
                format!(
                    "{cols} columns but {} shifts / {} scales",
                    shift.len(),
                    scale.len()
                ),
            ));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                value.push((xv[r * cols + c] - shift[c]) * scale[c]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            value,
            vec![rows, cols],
            Op::AffineCols {
                x,
                scale: scale.into(),
            },
            rg,
        ))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// Hard clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    /// Inverted dropout: in training mode each unit is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`. Evaluation mode is
    /// the identity and consumes no randomness.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(value, shape, Op::Dropout { x, mask }, rg))
    }

    fn dims2(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(
                op,
                format!("expected a rank-2 tensor, got shape {s:?}"),
            )),
        }
    }

    fn dims3(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [a, b, c] => Ok((a, b, c)),
            ref s => Err(Error::shape(
                op,
                format!("expected a rank-3 tensor, got shape {s:?}"),
            )),
        }
    }

    /// Batched 1-D cross-correlation (no kernel flip) with zero padding on both
    /// sides.
    ///
    /// `x: [B, c_in, len]`, `w: [c_out, c_in, k]`, `b: [c_out]` →
    /// `[B, c_out, (len + 2·padding − k) / stride + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (batch, c_in, len) = self.dims3("conv1d", x)?;
        let (c_out, w_in, k) = self.dims3("conv1d", w)?;
        if w_in != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input channels: input has {c_in}, kernel expects {w_in}"),
            ));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "bias length {:?} does not match output channels {c_out}",
                    self.shape(b)
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv1d stride must be positive".into(),
            ));
        }
        if len + 2 * padding < k {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "length: padded length {} shorter than kernel size {k}",
                    len + 2 * padding
                ),
            ));
        }
        let out_len = (len + 2 * padding - k) / stride + 1;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![0.0; batch * c_out * out_len];
        if stride == 1 {
            let plen = len + 2 * padding;
            let mut xp = vec![0.0; c_in * plen];
            for n in 0..batch {
                pad_rows(
                    &xv[n * c_in * len..(n + 1) * c_in * len],
                    len,
                    padding,
                    &mut xp,
                );
                let y = &mut out[n * c_out * out_len..(n + 1) * c_out * out_len];
                for (co, row) in y.chunks_exact_mut(out_len).enumerate() {
                    row.fill(bv[co]);
                }
                for ci in 0..c_in {
                    kernels::correlate_acc(
                        &wv[ci * k..],
                        c_out,
                        c_in * k,
                        k,
                        &xp[ci * plen..(ci + 1) * plen],
                        y,
                        out_len,
                        out_len,
                    );
                }
            }
            let rg = self.rg(x) || self.rg(w) || self.rg(b);
            return Ok(self.push(
                out,
                vec![batch, c_out, out_len],
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                },
                rg,
            ));
        }
        let mut col = vec![0.0; c_in * k * out_len];
        for n in 0..batch {
            im2col(
                &xv[n * c_in * len..(n + 1) * c_in * len],
                c_in,
                len,
                k,
                stride,
                padding,
                out_len,
                &mut col,
            );
            let y = &mut out[n * c_out * out_len..(n + 1) * c_out * out_len];
            for (co, row) in y.chunks_exact_mut(out_len).enumerate() {
                row.fill(bv[co]);
            }
            gemm(c_out, c_in * k, out_len, wv, false, &col, false, y, 1.0);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            out,
            vec![batch, c_out, out_len],
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Non-overlapping average pooling over the last axis of `[B, C, L]`; a
    /// trailing remainder of `L mod window` samples is dropped.
    pub fn avgpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (batch, ch, len) = self.dims3("avgpool1d", x)?;
        if window == 0 {
            return Err(Error::InvalidArgument(
                "pooling window must be positive".into(),
            ));
        }
        let out_len = len / window;
        if out_len == 0 {
            return Err(Error::shape(
                "avgpool1d",
                format!("length: window {window} exceeds signal length {len}"),
            ));
        }
        let xv = self.value(x);
        let inv = 1.0 / window as f64;
        let mut out = Vec::with_capacity(batch * ch * out_len);
        for row in xv.chunks_exact(len) {
            for t in 0..out_len {
                out.push(row[t * window..(t + 1) * window].iter().sum::<f64>() * inv);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            vec![batch, ch, out_len],
            Op::AvgPool1d { x, window },
            rg,
        ))
    }

    /// Dense layer `y = x · (w ⊙ mask)ᵀ + b` with `x: [M, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, mask: Option<Arc<[f64]>>) -> Result<Var> {
        let (m, n_in) = self.dims2("linear", x)?;
        let (n_out, w_in) = self.dims2("linear", w)?;
        if w_in != n_in {
            return Err(Error::shape(
                "linear",
                format!("input features: input has {n_in}, weight expects {w_in}"),
            ));
        }
        if self.shape(b) != [n_out] {
            return Err(Error::shape(
                "linear",
                format!(
                    "bias shape {:?} does not match {n_out} outputs",
                    self.shape(b)
                ),
            ));
        }
        if let Some(mk) = &mask {
            if mk.len() != n_out * n_in {
                return Err(Error::shape(
                    "linear",
                    format!("mask has {} entries, weight {}", mk.len(), n_out * n_in),
                ));
            }
        }
        let weff = masked_weight(self.value(w), &mask);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(m * n_out);
        for _ in 0..m {
            out.extend_from_slice(bv);
        }
        gemm(
            m,
            n_in,
            n_out,
            self.value(x),
            false,
            &weff,
            true,
            &mut out,
            1.0,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, vec![m, n_out], Op::Linear { x, w, b, mask }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(x), shape),
            ));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(value, shape.to_vec(), Op::Reshape(x), rg))
    }

    /// `[M, a] ++ [M, b] → [M, a + b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2("concat_cols", a)?;
        let (rb, cb) = self.dims2("concat_cols", b)?;
        if ra != rb {
            return Err(Error::shape("concat_cols", format!("rows: {ra} vs {rb}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            value.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            value.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, vec![ra, ca + cb], Op::ConcatCols(a, b), rg))
    }

    /// Columns `start..start + len` of a `[M, N]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("slice_cols", x)?;
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {cols}", start + len),
            ));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(value, vec![rows, len], Op::SliceCols { x, start }, rg))
    }

    /// Row gather `y[i] = x[rows[i]]` on a `[M, N]` tensor.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, cols) = self.dims2("gather_rows", x)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::shape(
                "gather_rows",
                format!("row index {bad} out of {m}"),
            ));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            value.extend_from_slice(&xv[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            value,
            vec![rows.len(), cols],
            Op::GatherRows {
                x,
                rows: rows.into(),
            },
            rg,
        ))
    }

    /// Row sums of `[M, N]` → `[M]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2("sum_cols", x)?;
        let value = self
            .value(x)
            .chunks_exact(cols.max(1))
            .take(rows)
            .map(|r| r.iter().sum())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(value, vec![rows], Op::SumCols(x), rg))
    }

    /// Numerically stable row-wise log-sum-exp of `[M, N]` → `[M]`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2("logsumexp_rows", x)?;
        if cols == 0 {
            return Err(Error::shape("logsumexp_rows", "zero columns"));
        }
        let value = self
            .value(x)
            .chunks_exact(cols)
            .map(|row| {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !mx.is_finite() {
                    return mx;
                }
                mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        let rows = self.shape(x)[0];
        let rg = self.rg(x);
        Ok(self.push(value, vec![rows], Op::LogSumExpRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![s], vec![], Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.value(x).iter().sum::<f64>() / n;
        let rg = self.rg(x);
        self.push(vec![s], vec![], Op::MeanAll(x), rg)
    }

    /// Runs reverse accumulation from the scalar `root`. Only one backward
    /// pass is allowed per graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.backward_done = true;
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &gy);
            self.nodes[i].grad = Some(gy);
        }
        // Nodes that require grad but were not reached still get a zero buffer
        // so every reachable shape invariant holds uniformly.
        for node in &mut self.nodes[..=root.0] {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let mut g = node
            .grad
            .take()
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        f(&mut g, &node.value);
        self.nodes[v.0].grad = Some(g);
    }

    fn acc_unary(&mut self, x: Var, gy: &[f64], yv: &[f64], d: impl Fn(f64, f64) -> f64) {
        self.acc(x, |g, xv| {
            for i in 0..g.len() {
                g[i] += gy[i] * d(xv[i], yv[i]);
            }
        });
    }

    fn propagate(&mut self, i: usize, gy: &[f64]) {
        let op = self.nodes[i].op.clone();
        let yv = std::mem::take(&mut self.nodes[i].value);
        match op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                self.acc(a, |g, _| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                self.acc(b, |g, _| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
            }
            Op::Sub(a, b) => {
                self.acc(a, |g, _| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                self.acc(b, |g, _| g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let av = self.value(a).to_vec();
                let bv = self.value(b).to_vec();
                self.acc(a, |g, _| {
                    for k in 0..g.len() {
                        g[k] += gy[k] * bv[k];
                    }
                });
                self.acc(b, |g, _| {
                    for k in 0..g.len() {
                        g[k] += gy[k] * av[k];
                    }
                });
            }
            Op::Scale(x, c) => self.acc_unary(x, gy, &yv, |_, _| c),
            Op::AddScalar(x) => self.acc_unary(x, gy, &yv, |_, _| 1.0),
            Op::AffineCols { x, scale } => {
                let cols = scale.len();
                self.acc(x, |g, _| {
                    for (k, gk) in g.iter_mut().enumerate() {
                        *gk += gy[k] * scale[k % cols];
                    }
                });
            }
            Op::Exp(x) => self.acc_unary(x, gy, &yv, |_, y| y),
            Op::Square(x) => self.acc_unary(x, gy, &yv, |x, _| 2.0 * x),
            Op::Relu(x) => self.acc_unary(x, gy, &yv, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Tanh(x) => self.acc_unary(x, gy, &yv, |_, y| 1.0 - y * y),
            Op::Clamp { x, lo, hi } => {
                self.acc_unary(
                    x,
                    gy,
                    &yv,
                    |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
                )
            }
            Op::Dropout { x, mask } => self.acc(x, |g, _| {
                for k in 0..g.len() {
                    g[k] += gy[k] * mask[k];
                }
            }),
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => self.conv1d_backward(x, w, b, stride, padding, gy),
            Op::AvgPool1d { x, window } => {
                let len = self.shape(x)[2];
                let out_len = len / window;
                let inv = 1.0 / window as f64;
                self.acc(x, |g, _| {
                    for (row, grow) in g.chunks_exact_mut(len).enumerate() {
                        for t in 0..out_len {
                            let d = gy[row * out_len + t] * inv;
                            grow[t * window..(t + 1) * window]
                                .iter_mut()
                                .for_each(|v| *v += d);
                        }
                    }
                });
            }
            Op::Linear { x, w, b, mask } => {
                let (m, n_in) = (self.shape(x)[0], self.shape(x)[1]);
                let n_out = self.shape(w)[0];
                if self.rg(x) {
                    let weff = masked_weight(self.value(w), &mask);
                    self.acc(x, |g, _| {
                        gemm(m, n_out, n_in, gy, false, &weff, false, g, 1.0)
                    });
                }
                if self.rg(w) {
                    let xv = self.value(x).to_vec();
                    self.acc(w, |g, _| {
                        let mut gw = vec![0.0; n_out * n_in];
                        gemm(n_out, m, n_in, gy, true, &xv, false, &mut gw, 0.0);
                        match &mask {
                            Some(mk) => g
                                .iter_mut()
                                .zip(gw)
                                .zip(mk.iter())
                                .for_each(|((g, d), k)| *g += d * k),
                            None => g.iter_mut().zip(gw).for_each(|(g, d)| *g += d),
                        }
                    });
                }
                self.acc(b, |g, _| {
                    for row in gy.chunks_exact(n_out) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::Reshape(x) => self.acc(x, |g, _| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d)),
            Op::ConcatCols(a, b) => {
                let rows = self.shape(a)[0];
                let (ca, cb) = (self.shape(a)[1], self.shape(b)[1]);
                self.acc(a, |g, _| {
                    for r in 0..rows {
                        let src = &gy[r * (ca + cb)..r * (ca + cb) + ca];
                        g[r * ca..(r + 1) * ca]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(g, d)| *g += d);
                    }
                });
                self.acc(b, |g, _| {
                    for r in 0..rows {
                        let src = &gy[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                        g[r * cb..(r + 1) * cb]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                let len = self.nodes[i].shape[1];
                self.acc(x, |g, _| {
                    for r in 0..rows {
                        g[r * cols + start..r * cols + start + len]
                            .iter_mut()
                            .zip(&gy[r * len..(r + 1) * len])
                            .for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let cols = self.shape(x)[1];
                self.acc(x, |g, _| {
                    for (k, &r) in rows.iter().enumerate() {
                        g[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(&gy[k * cols..(k + 1) * cols])
                            .for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::SumCols(x) => {
                let cols = self.shape(x)[1];
                self.acc(x, |g, _| {
                    for (k, gk) in g.iter_mut().enumerate() {
                        *gk += gy[k / cols];
                    }
                });
            }
            Op::LogSumExpRows(x) => {
                let cols = self.shape(x)[1];
                self.acc(x, |g, xv| {
                    for (r, (grow, xrow)) in g
                        .chunks_exact_mut(cols)
                        .zip(xv.chunks_exact(cols))
                        .enumerate()
                    {
                        let lse = yv[r];
                        for (gk, xk) in grow.iter_mut().zip(xrow) {
                            *gk += gy[r] * (xk - lse).exp();
                        }
                    }
                });
            }
            Op::SumAll(x) => self.acc(x, |g, _| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::MeanAll(x) => {
                let n = self.value(x).len().max(1) as f64;
                self.acc(x, |g, _| g.iter_mut().for_each(|v| *v += gy[0] / n));
            }
        }
        self.nodes[i].value = yv;
    }

    fn conv1d_backward(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        gy: &[f64],
    ) {
        let (batch, c_in, len) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
        let (c_out, k) = (self.shape(w)[0], self.shape(w)[2]);
        let out_len = (len + 2 * padding - k) / stride + 1;
        let (need_x, need_w) = (self.rg(x), self.rg(w));
        let mut gw = vec![0.0; c_out * c_in * k];
        let mut gx = if need_x {
            vec![0.0; batch * c_in * len]
        } else {
            Vec::new()
        };
        let xv = self.value(x);
        let wv = self.value(w);
        if stride == 1 {
            let plen = len + 2 * padding;
            let mut xp = vec![0.0; c_in * plen];
            let mut gxp = vec![0.0; c_in * plen];
            // kernel reversed along taps, laid out [c_out, c_in, k]
            let wflip: Vec<f64> = wv
                .chunks_exact(k)
                .flat_map(|row| row.iter().rev().copied())
                .collect();
            let glen = out_len + 2 * (k - 1);
            let mut gyp = vec![0.0; glen];
            for n in 0..batch {
                let gy_n = &gy[n * c_out * out_len..(n + 1) * c_out * out_len];
                if need_w {
                    pad_rows(
                        &xv[n * c_in * len..(n + 1) * c_in * len],
                        len,
                        padding,
                        &mut xp,
                    );
                    for ci in 0..c_in {
                        kernels::lagged_dot_acc(
                            gy_n,
                            c_out,
                            out_len,
                            out_len,
                            &xp[ci * plen..(ci + 1) * plen],
                            k,
                            &mut gw[ci * k..],
                            c_in * k,
                        );
                    }
                }
                if need_x {
                    gxp.fill(0.0);
                    for (co, grow) in gy_n.chunks_exact(out_len).enumerate() {
                        gyp[k - 1..k - 1 + out_len].copy_from_slice(grow);
                        kernels::correlate_acc(
                            &wflip[co * c_in * k..],
                            c_in,
                            k,
                            k,
                            &gyp,
                            &mut gxp,
                            plen,
                            plen,
                        );
                    }
                    for ci in 0..c_in {
                        let dst = &mut gx[(n * c_in + ci) * len..(n * c_in + ci + 1) * len];
                        dst.copy_from_slice(&gxp[ci * plen + padding..ci * plen + padding + len]);
                    }
                }
            }
        } else {
            let mut col = vec![0.0; c_in * k * out_len];
            for n in 0..batch {
                let gy_n = &gy[n * c_out * out_len..(n + 1) * c_out * out_len];
                if need_w {
                    im2col(
                        &xv[n * c_in * len..(n + 1) * c_in * len],
                        c_in,
                        len,
                        k,
                        stride,
                        padding,
                        out_len,
                        &mut col,
                    );
                    gemm(
                        c_out,
                        out_len,
                        c_in * k,
                        gy_n,
                        false,
                        &col,
                        true,
                        &mut gw,
                        1.0,
                    );
                }
                if need_x {
                    gemm(
                        c_in * k,
                        c_out,
                        out_len,
                        wv,
                        true,
                        gy_n,
                        false,
                        &mut col,
                        0.0,
                    );
                    col2im_add(
                        &col,
                        c_in,
                        len,
                        k,
                        stride,
                        padding,
                        out_len,
                        &mut gx[n * c_in * len..(n + 1) * c_in * len],
                    );
                }
            }
        }
        if need_w {
            self.acc(w, |g, _| g.iter_mut().zip(&gw).for_each(|(g, d)| *g += d));
        }
        if need_x {
            self.acc(x, |g, _| g.iter_mut().zip(&gx).for_each(|(g, d)| *g += d));
        }
        self.acc(b, |g, _| {
            for n in 0..batch {
                for co in 0..c_out {
                    let off = (n * c_out + co) * out_len;
                    g[co] += gy[off..off + out_len].iter().sum::<f64>();
                }
            }
        });
    }

    /// Gradients of every store array, zero-filled for arrays that did not
    /// take part in the backward pass.
    pub fn param_grads(&self, bound: &Bound, store: &ParameterStore) -> Vec<Vec<f64>> {
        store
            .iter()
            .map(|(id, entry)| {
                self.grad(bound.get(id))
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; entry.data.len()])
            })
            .collect()
    }
}
