//! Forward and backward passes for the building blocks. Sequences are
//! `T x D` matrices, one row per frame.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

const LN_EPS: f64 = 1e-5;

fn add_row_bias<T: Real>(m: &mut DMatrix<T>, b: &DMatrix<T>) {
    debug_assert_eq!(b.nrows(), 1);
    for mut row in m.row_iter_mut() {
        row += b;
    }
}

fn column_sums<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mut s = DMatrix::zeros(1, m.ncols());
    for row in m.row_iter() {
        s += row;
    }
    s
}

/// `x W + b` with `W: in x out`, `b: 1 x out`.
pub fn linear<T: Real>(x: &DMatrix<T>, w: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut y = x * w;
    add_row_bias(&mut y, b);
    y
}

/// Accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward<T: Real>(
    x: &DMatrix<T>,
    w: &DMatrix<T>,
    dy: &DMatrix<T>,
    dw: &mut DMatrix<T>,
    db: &mut DMatrix<T>,
) -> DMatrix<T> {
    dw.gemm_tr(T::one(), x, dy, T::one());
    *db += column_sums(dy);
    dy * w.transpose()
}

pub struct LayerNormCache<T: Real> {
    xhat: DMatrix<T>,
    inv_std: Vec<T>,
}

/// Per-row normalization followed by gain `g` and bias `b` (both `1 x D`).
pub fn layer_norm<T: Real>(x: &DMatrix<T>, g: &DMatrix<T>, b: &DMatrix<T>) -> (DMatrix<T>, LayerNormCache<T>) {
    let (n, d) = x.shape();
    let dn = T::from_count(d);
    let eps = T::lit(LN_EPS);
    let mut xhat = DMatrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.sum() / dn;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
        let s = T::one() / (var + eps).sqrt();
        for c in 0..d {
            xhat[(r, c)] = (x[(r, c)] - mean) * s;
        }
        inv_std.push(s);
    }
    let mut y = xhat.clone();
    for mut row in y.row_iter_mut() {
        row.component_mul_assign(g);
        row += b;
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    g: &DMatrix<T>,
    dy: &DMatrix<T>,
    dg: &mut DMatrix<T>,
    db: &mut DMatrix<T>,
) -> DMatrix<T> {
    let (n, d) = dy.shape();
    let dn = T::from_count(d);
    *dg += column_sums(&dy.component_mul(&cache.xhat));
    *db += column_sums(dy);
    let mut dx = DMatrix::zeros(n, d);
    for r in 0..n {
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for c in 0..d {
            let dxh = dy[(r, c)] * g[(0, c)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * cache.xhat[(r, c)];
        }
        mean_dxh /= dn;
        mean_dxh_xh /= dn;
        for c in 0..d {
            let dxh = dy[(r, c)] * g[(0, c)];
            dx[(r, c)] = cache.inv_std[r] * (dxh - mean_dxh - cache.xhat[(r, c)] * mean_dxh_xh);
        }
    }
    dx
}

/// tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(s: &DMatrix<T>) -> DMatrix<T> {
    let mut p = s.clone();
    for mut row in p.row_iter_mut() {
        let max = row.iter().copied().fold(row[0], |a, b| if b > a { b } else { a });
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row /= total;
    }
    p
}

/// Weights of one multi-head self-attention module.
pub struct AttentionWeights<'a, T: Real> {
    pub wq: &'a DMatrix<T>,
    pub bq: &'a DMatrix<T>,
    pub wk: &'a DMatrix<T>,
    pub wv: &'a DMatrix<T>,
    pub bv: &'a DMatrix<T>,
    pub wo: &'a DMatrix<T>,
    pub bo: &'a DMatrix<T>,
}

/// Matching gradient accumulators.
pub struct AttentionGrads<'a, T: Real> {
    pub wq: &'a mut DMatrix<T>,
    pub bq: &'a mut DMatrix<T>,
    pub wk: &'a mut DMatrix<T>,
    pub wv: &'a mut DMatrix<T>,
    pub bv: &'a mut DMatrix<T>,
    pub wo: &'a mut DMatrix<T>,
    pub bo: &'a mut DMatrix<T>,
}

pub struct AttentionCache<T: Real> {
    x: DMatrix<T>,
    q: DMatrix<T>,
    k: DMatrix<T>,
    v: DMatrix<T>,
    /// One `T x T` attention matrix per head.
    probs: Vec<DMatrix<T>>,
    concat: DMatrix<T>,
}

/// Unmasked scaled dot-product self-attention over all frames. Keys carry no
/// bias: softmax ignores a shift shared by a whole row of scores.
pub fn attention<T: Real>(x: &DMatrix<T>, w: &AttentionWeights<T>, heads: usize) -> (DMatrix<T>, AttentionCache<T>) {
    let (n, d) = x.shape();
    let dh = d / heads;
    let scale = T::one() / T::from_count(dh).sqrt();
    let q = linear(x, w.wq, w.bq);
    let k = x * w.wk;
    let v = linear(x, w.wv, w.bv);
    let mut concat = DMatrix::zeros(n, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let vh = v.columns(h * dh, dh);
        let scores = (qh * kh.transpose()) * scale;
        let p = softmax_rows(&scores);
        concat.columns_mut(h * dh, dh).copy_from(&(&p * vh));
        probs.push(p);
    }
    let y = linear(&concat, w.wo, w.bo);
    (
        y,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

pub fn attention_backward<T: Real>(
    cache: &AttentionCache<T>,
    w: &AttentionWeights<T>,
    g: AttentionGrads<T>,
    dy: &DMatrix<T>,
    heads: usize,
) -> DMatrix<T> {
    let (n, d) = cache.x.shape();
    let dh = d / heads;
    let scale = T::one() / T::from_count(dh).sqrt();
    let dconcat = linear_backward(&cache.concat, w.wo, dy, g.wo, g.bo);
    let mut dq = DMatrix::zeros(n, d);
    let mut dk = DMatrix::zeros(n, d);
    let mut dv = DMatrix::zeros(n, d);
    for h in 0..heads {
        let p = &cache.probs[h];
        let doh = dconcat.columns(h * dh, dh);
        let qh = cache.q.columns(h * dh, dh);
        let kh = cache.k.columns(h * dh, dh);
        let vh = cache.v.columns(h * dh, dh);
        dv.columns_mut(h * dh, dh).copy_from(&(p.transpose() * doh));
        let dp = doh * vh.transpose();
        // softmax backward, row by row
        let mut ds = p.component_mul(&dp);
        for r in 0..n {
            let dot = ds.row(r).sum();
            for c in 0..n {
                ds[(r, c)] -= p[(r, c)] * dot;
            }
        }
        ds *= scale;
        dq.columns_mut(h * dh, dh).copy_from(&(&ds * kh));
        dk.columns_mut(h * dh, dh).copy_from(&(ds.transpose() * qh));
    }
    let mut dx = linear_backward(&cache.x, w.wq, &dq, g.wq, g.bq);
    g.wk.gemm_tr(T::one(), &cache.x, &dk, T::one());
    dx += dk * w.wk.transpose();
    dx += linear_backward(&cache.x, w.wv, &dv, g.wv, g.bv);
    dx
}

/// Mean of non-overlapping windows of `ratio` frames. The last window is
/// padded with zero frames, so its mean is scaled down by the padding.
pub fn window_average<T: Real>(x: &DMatrix<T>, ratio: usize) -> Result<DMatrix<T>> {
    if ratio == 0 {
        return Err(Error::Invalid("ratio must be positive".into()));
    }
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::Shape("cannot downsample an empty sequence".into()));
    }
    let out_len = n.div_ceil(ratio);
    let inv = T::one() / T::from_count(ratio);
    let mut y = DMatrix::zeros(out_len, d);
    for i in 0..n {
        let mut row = y.row_mut(i / ratio);
        row += x.row(i) * inv;
    }
    Ok(y)
}

pub fn window_average_backward<T: Real>(dy: &DMatrix<T>, ratio: usize, input_len: usize) -> DMatrix<T> {
    let inv = T::one() / T::from_count(ratio);
    DMatrix::from_fn(input_len, dy.ncols(), |i, c| dy[(i / ratio, c)] * inv)
}

/// Repeat each frame `ratio` times and truncate to `target_len`.
pub fn repeat_frames<T: Real>(x: &DMatrix<T>, ratio: usize, target_len: usize) -> Result<DMatrix<T>> {
    if ratio == 0 || target_len.div_ceil(ratio) != x.nrows() {
        return Err(Error::Shape(format!(
            "cannot upsample {} frames by {ratio} to {target_len}",
            x.nrows()
        )));
    }
    Ok(DMatrix::from_fn(target_len, x.ncols(), |i, c| x[(i / ratio, c)]))
}

pub fn repeat_frames_backward<T: Real>(dy: &DMatrix<T>, ratio: usize, input_len: usize) -> DMatrix<T> {
    let mut dx = DMatrix::zeros(input_len, dy.ncols());
    for i in 0..dy.nrows() {
        let mut row = dx.row_mut(i / ratio);
        row += dy.row(i);
    }
    dx
}

/// Mean cross-entropy over the rows where `mask` is set, and its gradient
/// with respect to the logits (zero on unmasked rows). `None` when no row
/// is masked.
pub fn masked_cross_entropy<T: Real>(logits: &DMatrix<T>, targets: &[usize], mask: &[bool]) -> Option<(T, DMatrix<T>)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return None;
    }
    let inv = T::one() / T::from_count(count);
    let probs = softmax_rows(logits);
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    let mut loss = T::zero();
    for (r, (&m, &t)) in mask.iter().zip(targets).enumerate() {
        if !m {
            continue;
        }
        loss -= probs[(r, t)].ln();
        for c in 0..logits.ncols() {
            grad[(r, c)] = probs[(r, c)] * inv;
        }
        grad[(r, t)] -= inv;
    }
    Some((loss * inv, grad))
}

/// Fixed sinusoidal position table, `len x dim`.
pub fn sinusoidal_positions<T: Real>(len: usize, dim: usize) -> DMatrix<T> {
    DMatrix::from_fn(len, dim, |t, c| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / dim as f64);
        T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}
