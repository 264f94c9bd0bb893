//! Register-blocked inner loops of stride-1 convolution.
//!
//! Every kernel has one portable body; on x86-64 the same body is also
//! compiled with AVX2 enabled and chosen at run time. Neither variant fuses
//! multiply and add, so both produce bit-identical results.

const LANES: usize = 4;

/// `out[c·os + t] += Σ_j w[c·ws + j] · x[t + j]` for `c < nc`, `t < t_len`.
pub(super) fn correlate_acc(
    w: &[f64],
    nc: usize,
    ws: usize,
    k: usize,
    x: &[f64],
    out: &mut [f64],
    os: usize,
    t_len: usize,
) {
    assert!(x.len() + 1 >= t_len + k, "correlate_acc: input too short");
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected on this CPU
        unsafe { correlate_acc_avx2(w, nc, ws, k, x, out, os, t_len) };
        return;
    }
    correlate_acc_body(w, nc, ws, k, x, out, os, t_len);
}

/// `gw[c·gs + j] += Σ_t g[c·ts + t] · x[t + j]` for `c < nc`, `j < k`.
pub(super) fn lagged_dot_acc(
    g: &[f64],
    nc: usize,
    ts: usize,
    t_len: usize,
    x: &[f64],
    k: usize,
    gw: &mut [f64],
    gs: usize,
) {
    assert!(x.len() + 1 >= t_len + k, "lagged_dot_acc: input too short");
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected on this CPU
        unsafe { lagged_dot_acc_avx2(g, nc, ts, t_len, x, k, gw, gs) };
        return;
    }
    lagged_dot_acc_body(g, nc, ts, t_len, x, k, gw, gs);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn correlate_acc_avx2(
    w: &[f64],
    nc: usize,
    ws: usize,
    k: usize,
    x: &[f64],
    out: &mut [f64],
    os: usize,
    t_len: usize,
) {
    correlate_acc_body(w, nc, ws, k, x, out, os, t_len);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn lagged_dot_acc_avx2(
    g: &[f64],
    nc: usize,
    ts: usize,
    t_len: usize,
    x: &[f64],
    k: usize,
    gw: &mut [f64],
    gs: usize,
) {
    lagged_dot_acc_body(g, nc, ts, t_len, x, k, gw, gs);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn correlate_acc_body(
    w: &[f64],
    nc: usize,
    ws: usize,
    k: usize,
    x: &[f64],
    out: &mut [f64],
    os: usize,
    t_len: usize,
) {
    let mut c0 = 0;
    while c0 + 8 <= nc {
        correlate_block::<8>(w, c0, ws, k, x, out, os, t_len);
        c0 += 8;
    }
    while c0 + 4 <= nc {
        correlate_block::<4>(w, c0, ws, k, x, out, os, t_len);
        c0 += 4;
    }
    while c0 < nc {
        correlate_block::<1>(w, c0, ws, k, x, out, os, t_len);
        c0 += 1;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn correlate_block<const C: usize>(
    w: &[f64],
    c0: usize,
    ws: usize,
    k: usize,
    x: &[f64],
    out: &mut [f64],
    os: usize,
    t_len: usize,
) {
    // kernel taps packed tap-major: wt[j·C + c]
    let mut wt = vec![0.0; k * C];
    for c in 0..C {
        for j in 0..k {
            wt[j * C + c] = w[(c0 + c) * ws + j];
        }
    }
    let mut t = 0;
    while t + LANES <= t_len {
        let mut acc = [[0.0f64; LANES]; C];
        let xw = &x[t..t + k + LANES - 1];
        for (j, wj) in wt.chunks_exact(C).enumerate() {
            let xs: &[f64; LANES] = xw[j..j + LANES].try_into().expect("window");
            for c in 0..C {
                for l in 0..LANES {
                    acc[c][l] += wj[c] * xs[l];
                }
            }
        }
        for c in 0..C {
            let o = &mut out[(c0 + c) * os + t..(c0 + c) * os + t + LANES];
            for l in 0..LANES {
                o[l] += acc[c][l];
            }
        }
        t += LANES;
    }
    for t in t..t_len {
        for c in 0..C {
            let mut s = 0.0;
            for j in 0..k {
                s += wt[j * C + c] * x[t + j];
            }
            out[(c0 + c) * os + t] += s;
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn lagged_dot_acc_body(
    g: &[f64],
    nc: usize,
    ts: usize,
    t_len: usize,
    x: &[f64],
    k: usize,
    gw: &mut [f64],
    gs: usize,
) {
    let mut c0 = 0;
    while c0 + 8 <= nc {
        lagged_block::<8>(g, c0, ts, t_len, x, k, gw, gs);
        c0 += 8;
    }
    while c0 + 4 <= nc {
        lagged_block::<4>(g, c0, ts, t_len, x, k, gw, gs);
        c0 += 4;
    }
    while c0 < nc {
        lagged_block::<1>(g, c0, ts, t_len, x, k, gw, gs);
        c0 += 1;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn lagged_block<const C: usize>(
    g: &[f64],
    c0: usize,
    ts: usize,
    t_len: usize,
    x: &[f64],
    k: usize,
    gw: &mut [f64],
    gs: usize,
) {
    // gradient rows packed time-major: gt[t·C + c]
    let mut gt = vec![0.0; t_len * C];
    for c in 0..C {
        for t in 0..t_len {
            gt[t * C + c] = g[(c0 + c) * ts + t];
        }
    }
    let mut j = 0;
    while j + LANES <= k {
        let mut acc = [[0.0f64; LANES]; C];
        let xw = &x[j..j + t_len + LANES - 1];
        for (t, gc) in gt.chunks_exact(C).enumerate() {
            let xs: &[f64; LANES] = xw[t..t + LANES].try_into().expect("window");
            for c in 0..C {
                for l in 0..LANES {
                    acc[c][l] += gc[c] * xs[l];
                }
            }
        }
        for c in 0..C {
            for l in 0..LANES {
                gw[(c0 + c) * gs + j + l] += acc[c][l];
            }
        }
        j += LANES;
    }
    for j in j..k {
        for c in 0..C {
            let mut s = 0.0;
            for t in 0..t_len {
                s += gt[t * C + c] * x[t + j];
            }
            gw[(c0 + c) * gs + j] += s;
        }
    }
}
