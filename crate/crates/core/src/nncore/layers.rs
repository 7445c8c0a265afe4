//! Layer kernels with hand-derived backward passes.
//!
//! Every forward returns whatever the matching backward needs; nothing is
//! recorded implicitly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Real};
use super::tensor::{Matrix, Tensor3};
use crate::{Error, Result};

/// Whether layers use batch statistics and dropout (`Train`) or running
/// statistics and no dropout (`Infer`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    Train,
    Infer,
}

// ---------------------------------------------------------------- conv1d

pub struct Conv1dCache<T> {
    /// im2col buffer, `(batch * t_out) x (kernel * in_ch)`.
    cols: Vec<T>,
    batch: usize,
    t_in: usize,
    t_out: usize,
    in_ch: usize,
}

/// `(pad_left, pad_right)` for "same" padding.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    let left = (kernel - 1) / 2;
    (left, kernel - 1 - left)
}

/// Cross-correlation with zero "same" padding.
///
/// `weight` is laid out `[kernel][in_ch][out_ch]`; output length is
/// `ceil(T / stride)`.
pub fn conv1d_forward<T: Real>(
    x: &Tensor3<T>,
    weight: &[T],
    bias: &[T],
    kernel: usize,
    stride: usize,
) -> Result<(Tensor3<T>, Conv1dCache<T>)> {
    let in_ch = x.channels;
    if stride == 0 || kernel == 0 {
        return Err(Error::Shape(format!(
            "conv1d kernel {kernel} and stride {stride} must be positive"
        )));
    }
    if !weight.len().is_multiple_of(kernel * in_ch) || weight.is_empty() {
        return Err(Error::Shape(format!(
            "conv1d weight of {} values does not match kernel {kernel} x input channels {in_ch}",
            weight.len()
        )));
    }
    let out_ch = weight.len() / (kernel * in_ch);
    if bias.len() != out_ch {
        return Err(Error::Shape(format!(
            "conv1d bias has {} values for {out_ch} filters",
            bias.len()
        )));
    }
    let (pad_left, _) = same_padding(kernel);
    let t_in = x.time;
    let t_out = t_in.div_ceil(stride);
    let width = kernel * in_ch;
    let mut cols = vec![T::zero(); x.batch * t_out * width];
    for b in 0..x.batch {
        for to in 0..t_out {
            let row = &mut cols[(b * t_out + to) * width..(b * t_out + to + 1) * width];
            for kk in 0..kernel {
                let ti = (to * stride + kk) as isize - pad_left as isize;
                if ti < 0 || ti as usize >= t_in {
                    continue;
                }
                let src = (b * t_in + ti as usize) * in_ch;
                row[kk * in_ch..(kk + 1) * in_ch].copy_from_slice(&x.data[src..src + in_ch]);
            }
        }
    }
    let rows = x.batch * t_out;
    let mut out = vec![T::zero(); rows * out_ch];
    for r in 0..rows {
        out[r * out_ch..(r + 1) * out_ch].copy_from_slice(bias);
    }
    gemm(rows, width, out_ch, &cols, false, weight, false, &mut out, true);
    Ok((
        Tensor3 {
            batch: x.batch,
            time: t_out,
            channels: out_ch,
            data: out,
        },
        Conv1dCache {
            cols,
            batch: x.batch,
            t_in,
            t_out,
            in_ch,
        },
    ))
}

pub struct Conv1dGrads<T> {
    pub input: Option<Tensor3<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv1d_backward<T: Real>(
    cache: &Conv1dCache<T>,
    dy: &Tensor3<T>,
    weight: &[T],
    kernel: usize,
    stride: usize,
    need_input_grad: bool,
) -> Conv1dGrads<T> {
    let in_ch = cache.in_ch;
    let width = kernel * in_ch;
    let out_ch = dy.channels;
    let rows = cache.batch * cache.t_out;
    debug_assert_eq!(dy.data.len(), rows * out_ch);

    let mut dw = vec![T::zero(); width * out_ch];
    gemm(width, rows, out_ch, &cache.cols, true, &dy.data, false, &mut dw, false);
    let mut db = vec![T::zero(); out_ch];
    for r in 0..rows {
        for (acc, v) in db.iter_mut().zip(&dy.data[r * out_ch..(r + 1) * out_ch]) {
            *acc += *v;
        }
    }

    let input = need_input_grad.then(|| {
        let mut dcols = vec![T::zero(); rows * width];
        gemm(rows, out_ch, width, &dy.data, false, weight, true, &mut dcols, false);
        let (pad_left, _) = same_padding(kernel);
        let mut dx = Tensor3::zeros(cache.batch, cache.t_in, in_ch);
        for b in 0..cache.batch {
            for to in 0..cache.t_out {
                let row = &dcols[(b * cache.t_out + to) * width..(b * cache.t_out + to + 1) * width];
                for kk in 0..kernel {
                    let ti = (to * stride + kk) as isize - pad_left as isize;
                    if ti < 0 || ti as usize >= cache.t_in {
                        continue;
                    }
                    let dst = (b * cache.t_in + ti as usize) * in_ch;
                    for (d, s) in dx.data[dst..dst + in_ch]
                        .iter_mut()
                        .zip(&row[kk * in_ch..(kk + 1) * in_ch])
                    {
                        *d += *s;
                    }
                }
            }
        }
        dx
    });
    Conv1dGrads {
        input,
        weight: dw,
        bias: db,
    }
}

// ------------------------------------------------------------- batchnorm

pub struct BatchNormCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: TrainMode,
}

/// Batch statistics observed in a `Train` forward pass.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel normalization over all `batch * time` rows.
///
/// Returns the batch statistics in `Train` mode so the caller can update
/// its running averages (see [`update_running_stats`]).
#[allow(clippy::type_complexity)]
pub fn batchnorm_forward<T: Real>(
    x: &Tensor3<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    mode: TrainMode,
    eps: f64,
) -> Result<(Tensor3<T>, BatchNormCache<T>, Option<BatchStats<T>>)> {
    let c = x.channels;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c
    {
        return Err(Error::Shape(format!(
            "batchnorm parameters sized {} for {c} channels",
            gamma.len()
        )));
    }
    let n = x.rows();
    let eps = T::cast(eps);
    let (mean, var, stats) = match mode {
        TrainMode::Train => {
            if n < 2 {
                return Err(Error::InvalidInput(format!(
                    "batchnorm in train mode needs batch x time >= 2, got {n}"
                )));
            }
            let nf = T::cast(n as f64);
            let mut mean = vec![T::zero(); c];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(&x.data[r * c..(r + 1) * c]) {
                    *m += *v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![T::zero(); c];
            for r in 0..n {
                for ((acc, v), m) in var.iter_mut().zip(&x.data[r * c..(r + 1) * c]).zip(&mean) {
                    let d = *v - *m;
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= nf);
            (
                mean.clone(),
                var.clone(),
                Some(BatchStats { mean, var }),
            )
        }
        TrainMode::Infer => (running_mean.to_vec(), running_var.to_vec(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); n * c];
    let mut y = vec![T::zero(); n * c];
    for r in 0..n {
        for ch in 0..c {
            let i = r * c + ch;
            let h = (x.data[i] - mean[ch]) * inv_std[ch];
            x_hat[i] = h;
            y[i] = gamma[ch] * h + beta[ch];
        }
    }
    Ok((
        Tensor3 {
            batch: x.batch,
            time: x.time,
            channels: c,
            data: y,
        },
        BatchNormCache {
            x_hat,
            inv_std,
            mode,
        },
        stats,
    ))
}

/// `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running_stats<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BatchStats<T>,
    momentum: f64,
) {
    let m = T::cast(momentum);
    let one_m = T::one() - m;
    for (r, b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = m * *r + one_m * *b;
    }
    for (r, b) in running_var.iter_mut().zip(&stats.var) {
        *r = m * *r + one_m * *b;
    }
}

pub struct BatchNormGrads<T> {
    pub input: Tensor3<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    dy: &Tensor3<T>,
    gamma: &[T],
) -> BatchNormGrads<T> {
    let c = dy.channels;
    let n = dy.rows();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for r in 0..n {
        for ch in 0..c {
            let i = r * c + ch;
            dgamma[ch] += dy.data[i] * cache.x_hat[i];
            dbeta[ch] += dy.data[i];
        }
    }
    let mut dx = vec![T::zero(); n * c];
    match cache.mode {
        TrainMode::Train => {
            let nf = T::cast(n as f64);
            for r in 0..n {
                for ch in 0..c {
                    let i = r * c + ch;
                    dx[i] = gamma[ch] * cache.inv_std[ch] / nf
                        * (nf * dy.data[i] - dbeta[ch] - cache.x_hat[i] * dgamma[ch]);
                }
            }
        }
        TrainMode::Infer => {
            for r in 0..n {
                for ch in 0..c {
                    let i = r * c + ch;
                    dx[i] = dy.data[i] * gamma[ch] * cache.inv_std[ch];
                }
            }
        }
    }
    BatchNormGrads {
        input: Tensor3 {
            batch: dy.batch,
            time: dy.time,
            channels: c,
            data: dx,
        },
        gamma: dgamma,
        beta: dbeta,
    }
}

// ------------------------------------------------------- relu / dropout

pub fn relu_forward<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(output: &[T], dy: &mut [T]) {
    for (d, y) in dy.iter_mut().zip(output) {
        if *y <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Inverted dropout. Returns the applied mask (`0` or `1 / (1 - rate)`), or
/// `None` when the layer is the identity.
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(
    x: &mut [T],
    rate: f64,
    mode: TrainMode,
    rng: &mut R,
) -> Option<Vec<T>> {
    if mode == TrainMode::Infer || rate <= 0.0 {
        return None;
    }
    let keep = T::cast(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= *m;
    }
    Some(mask)
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, dy: &mut [T]) {
    if let Some(mask) = mask {
        for (d, m) in dy.iter_mut().zip(mask) {
            *d *= *m;
        }
    }
}

// ------------------------------------------------------ pooling / dense

/// Mean over time: `(batch, time, channels) -> (batch, channels)`.
pub fn global_avg_pool_forward<T: Real>(x: &Tensor3<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(x.batch, x.channels);
    let inv_t = T::one() / T::cast(x.time as f64);
    for b in 0..x.batch {
        let row = out.row_mut(b);
        for t in 0..x.time {
            let off = (b * x.time + t) * x.channels;
            for (o, v) in row.iter_mut().zip(&x.data[off..off + x.channels]) {
                *o += *v;
            }
        }
        row.iter_mut().for_each(|o| *o *= inv_t);
    }
    out
}

pub fn global_avg_pool_backward<T: Real>(dy: &Matrix<T>, time: usize) -> Tensor3<T> {
    let c = dy.cols;
    let mut dx = Tensor3::zeros(dy.rows, time, c);
    let inv_t = T::one() / T::cast(time as f64);
    for b in 0..dy.rows {
        for t in 0..time {
            let off = (b * time + t) * c;
            for (d, g) in dx.data[off..off + c].iter_mut().zip(dy.row(b)) {
                *d = *g * inv_t;
            }
        }
    }
    dx
}

/// `x W + b` with `W` laid out `in x out`.
pub fn dense_forward<T: Real>(x: &Matrix<T>, weight: &[T], bias: &[T]) -> Result<Matrix<T>> {
    let out_dim = bias.len();
    if weight.len() != x.cols * out_dim {
        return Err(Error::Shape(format!(
            "dense weight of {} values for {} inputs x {out_dim} outputs",
            weight.len(),
            x.cols
        )));
    }
    let mut y = Matrix::zeros(x.rows, out_dim);
    for r in 0..x.rows {
        y.row_mut(r).copy_from_slice(bias);
    }
    gemm(x.rows, x.cols, out_dim, &x.data, false, weight, false, &mut y.data, true);
    Ok(y)
}

pub struct DenseGrads<T> {
    pub input: Matrix<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Real>(x: &Matrix<T>, dy: &Matrix<T>, weight: &[T]) -> DenseGrads<T> {
    let (n, din, dout) = (x.rows, x.cols, dy.cols);
    let mut dw = vec![T::zero(); din * dout];
    gemm(din, n, dout, &x.data, true, &dy.data, false, &mut dw, false);
    let mut db = vec![T::zero(); dout];
    for r in 0..n {
        for (acc, v) in db.iter_mut().zip(dy.row(r)) {
            *acc += *v;
        }
    }
    let mut dx = Matrix::zeros(n, din);
    gemm(n, dout, din, &dy.data, false, weight, true, &mut dx.data, false);
    DenseGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

// ----------------------------------------------------------- L2 normalize

/// Added to the row norm so zero rows map to zero instead of NaN.
pub const L2_EPS: f64 = 1e-12;

/// Row-wise `x / (||x|| + 1e-12)`. Returns the normalized rows and norms.
pub fn l2_normalize_forward<T: Real>(x: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = y.row_mut(r);
        let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        let s = norm + T::cast(L2_EPS);
        row.iter_mut().for_each(|v| *v /= s);
        norms.push(norm);
    }
    (y, norms)
}

pub fn l2_normalize_backward<T: Real>(x: &Matrix<T>, norms: &[T], dy: &Matrix<T>) -> Matrix<T> {
    let mut dx = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let n = norms[r];
        let s = n + T::cast(L2_EPS);
        let xr = x.row(r);
        let gr = dy.row(r);
        let dot: T = xr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
        let coef = if n > T::zero() { dot / (n * s * s) } else { T::zero() };
        for ((d, g), xv) in dx.row_mut(r).iter_mut().zip(gr).zip(xr) {
            *d = *g / s - *xv * coef;
        }
    }
    dx
}

// --------------------------------------------------------- softmax / CCE

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut p = logits.clone();
    for r in 0..p.rows {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Mean categorical cross entropy and its gradient `(softmax - onehot) / B`.
pub fn softmax_cce<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> Result<(f64, Matrix<T>)> {
    if targets.len() != logits.rows {
        return Err(Error::Shape(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= logits.cols) {
        return Err(Error::Shape(format!(
            "target class {t} outside {} logits",
            logits.cols
        )));
    }
    let b = logits.rows as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[t].as_f64();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (row[c].as_f64() - lse).exp();
            let onehot = if c == t { 1.0 } else { 0.0 };
            *g = T::cast((p - onehot) / b);
        }
    }
    Ok((loss / b, grad))
}
