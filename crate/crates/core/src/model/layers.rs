//! Layer primitives with hand-derived backward passes. Activations live in
//! `[batch, channel, time]` order on the convolutional path and
//! `[time, d_model]` per sample inside the transformer.

use crate::error::{PcgError, Result};
use ndarray::{Array1, Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

// ---------------------------------------------------------------- conv1d

#[derive(Debug, Clone)]
pub struct ConvParams {
    /// `[out_channels, in_channels, kernel]`
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

pub struct ConvCache {
    pub input: Array3<f64>,
}

/// Valid time range so that `t + m - pad` stays inside `[0, time)`.
fn conv_span(time: usize, m: usize, pad: usize) -> (usize, usize, isize) {
    let shift = m as isize - pad as isize;
    let t0 = (-shift).max(0) as usize;
    let t1 = ((time as isize - shift).min(time as isize)).max(0) as usize;
    (t0, t1, shift)
}

/// Cross-correlation with same-length output: pad = (kernel - 1) / 2 zeros
/// on each side (kernel sizes here are 1 and 3).
pub fn conv1d_forward(params: &ConvParams, x: &Array3<f64>) -> Result<(Array3<f64>, ConvCache)> {
    let (out_ch, in_ch, kernel) = params.weight.dim();
    let (batch, channels, time) = x.dim();
    if channels != in_ch {
        return Err(PcgError::ShapeMismatch(format!(
            "conv expects {in_ch} input channels, got {channels}"
        )));
    }
    let pad = (kernel - 1) / 2;
    let mut y = Array3::zeros((batch, out_ch, time));
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    let ws = params.weight.as_slice().unwrap();
    for b in 0..batch {
        for o in 0..out_ch {
            let y_row = &mut ys[(b * out_ch + o) * time..(b * out_ch + o + 1) * time];
            y_row.fill(params.bias[o]);
            for c in 0..in_ch {
                let x_row = &xs[(b * in_ch + c) * time..(b * in_ch + c + 1) * time];
                for m in 0..kernel {
                    let w = ws[(o * in_ch + c) * kernel + m];
                    let (t0, t1, shift) = conv_span(time, m, pad);
                    let src = &x_row[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                    for (yv, xv) in y_row[t0..t1].iter_mut().zip(src) {
                        *yv += w * xv;
                    }
                }
            }
        }
    }
    Ok((y, ConvCache { input: x.clone() }))
}

pub fn conv1d_backward(
    params: &ConvParams,
    cache: &ConvCache,
    grad_out: &Array3<f64>,
) -> (Array3<f64>, ConvParams) {
    let (out_ch, in_ch, kernel) = params.weight.dim();
    let (batch, _, time) = cache.input.dim();
    let pad = (kernel - 1) / 2;
    let mut grad_in = Array3::zeros(cache.input.dim());
    let mut grad_w = Array3::zeros((out_ch, in_ch, kernel));
    let mut grad_b = Array1::zeros(out_ch);
    let xs = cache.input.as_slice().unwrap();
    let gys = grad_out.as_slice().unwrap();
    let gxs = grad_in.as_slice_mut().unwrap();
    let gws = grad_w.as_slice_mut().unwrap();
    let ws = params.weight.as_slice().unwrap();
    for b in 0..batch {
        for o in 0..out_ch {
            let gy_row = &gys[(b * out_ch + o) * time..(b * out_ch + o + 1) * time];
            grad_b[o] += gy_row.iter().sum::<f64>();
            for c in 0..in_ch {
                let x_base = (b * in_ch + c) * time;
                for m in 0..kernel {
                    let (t0, t1, shift) = conv_span(time, m, pad);
                    let s0 = (t0 as isize + shift) as usize;
                    let s1 = (t1 as isize + shift) as usize;
                    let w = ws[(o * in_ch + c) * kernel + m];
                    let mut acc = 0.0;
                    {
                        let x_row = &xs[x_base + s0..x_base + s1];
                        let gx_row = &mut gxs[x_base + s0..x_base + s1];
                        for ((gxv, xv), gyv) in gx_row.iter_mut().zip(x_row).zip(&gy_row[t0..t1]) {
                            acc += gyv * xv;
                            *gxv += gyv * w;
                        }
                    }
                    gws[(o * in_ch + c) * kernel + m] += acc;
                }
            }
        }
    }
    (
        grad_in,
        ConvParams {
            weight: grad_w,
            bias: grad_b,
        },
    )
}

// ------------------------------------------------------------- batch norm

#[derive(Debug, Clone)]
pub struct BnParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BnParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }
}

pub struct BnCache {
    pub xhat: Array3<f64>,
    pub inv_std: Array1<f64>,
}

/// Training-mode batch norm over batch x time per channel; updates running
/// statistics in place with momentum 0.1 (biased batch variance).
pub fn batch_norm_train(
    params: &mut BnParams,
    x: &Array3<f64>,
) -> Result<(Array3<f64>, BnCache)> {
    let (batch, channels, time) = x.dim();
    if batch < 2 {
        return Err(PcgError::DegenerateBatch(batch));
    }
    let n = (batch * time) as f64;
    let mut y = Array3::zeros(x.dim());
    let mut xhat = Array3::zeros(x.dim());
    let mut inv_std = Array1::zeros(channels);
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    let xh = xhat.as_slice_mut().unwrap();
    let row = |b: usize, c: usize| (b * channels + c) * time..(b * channels + c + 1) * time;
    for c in 0..channels {
        let mut mean = 0.0;
        for b in 0..batch {
            mean += xs[row(b, c)].iter().sum::<f64>();
        }
        mean /= n;
        let mut var = 0.0;
        for b in 0..batch {
            var += xs[row(b, c)].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        var /= n;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        let (gamma, beta) = (params.gamma[c], params.beta[c]);
        for b in 0..batch {
            let r = row(b, c);
            for ((yv, xhv), xv) in ys[r.clone()].iter_mut().zip(&mut xh[r.clone()]).zip(&xs[r]) {
                let h = (xv - mean) * is;
                *xhv = h;
                *yv = gamma * h + beta;
            }
        }
        params.running_mean[c] = (1.0 - BN_MOMENTUM) * params.running_mean[c] + BN_MOMENTUM * mean;
        params.running_var[c] = (1.0 - BN_MOMENTUM) * params.running_var[c] + BN_MOMENTUM * var;
    }
    Ok((y, BnCache { xhat, inv_std }))
}

/// Inference-mode batch norm using the running statistics.
pub fn batch_norm_eval(params: &BnParams, x: &Array3<f64>) -> Array3<f64> {
    let (batch, channels, time) = x.dim();
    let mut y = Array3::zeros(x.dim());
    for c in 0..channels {
        let is = 1.0 / (params.running_var[c] + BN_EPS).sqrt();
        let (gamma, beta, mean) = (params.gamma[c], params.beta[c], params.running_mean[c]);
        for b in 0..batch {
            for t in 0..time {
                y[[b, c, t]] = gamma * (x[[b, c, t]] - mean) * is + beta;
            }
        }
    }
    y
}

pub fn batch_norm_backward(
    params: &BnParams,
    cache: &BnCache,
    grad_out: &Array3<f64>,
) -> (Array3<f64>, BnParams) {
    let (batch, channels, time) = grad_out.dim();
    let n = (batch * time) as f64;
    let mut grad_in = Array3::zeros(grad_out.dim());
    let mut grad_gamma = Array1::zeros(channels);
    let mut grad_beta = Array1::zeros(channels);
    let gys = grad_out.as_slice().unwrap();
    let xhs = cache.xhat.as_slice().unwrap();
    let gxs = grad_in.as_slice_mut().unwrap();
    let row = |b: usize, c: usize| (b * channels + c) * time..(b * channels + c + 1) * time;
    for c in 0..channels {
        let mut sum_gy = 0.0;
        let mut sum_gy_xhat = 0.0;
        for b in 0..batch {
            let r = row(b, c);
            for (g, h) in gys[r.clone()].iter().zip(&xhs[r]) {
                sum_gy += g;
                sum_gy_xhat += g * h;
            }
        }
        grad_beta[c] = sum_gy;
        grad_gamma[c] = sum_gy_xhat;
        let scale = params.gamma[c] * cache.inv_std[c];
        let mean_gy = sum_gy / n;
        let mean_gy_xhat = sum_gy_xhat / n;
        for b in 0..batch {
            let r = row(b, c);
            for ((gx, g), h) in gxs[r.clone()].iter_mut().zip(&gys[r.clone()]).zip(&xhs[r]) {
                *gx = scale * (g - mean_gy - h * mean_gy_xhat);
            }
        }
    }
    (
        grad_in,
        BnParams {
            gamma: grad_gamma,
            beta: grad_beta,
            running_mean: Array1::zeros(channels),
            running_var: Array1::zeros(channels),
        },
    )
}

// ------------------------------------------------------------------ relu

pub fn relu_forward(x: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
    let y = x.mapv(|v| v.max(0.0));
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    (y, mask)
}

pub fn relu_backward(mask: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    grad_out * mask
}

// --------------------------------------------------------------- dropout

/// Inverted dropout: surviving activations are scaled by 1/keep at train
/// time so inference is a pass-through. Returns the scaled mask.
pub fn dropout_mask_3d(shape: (usize, usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    if rate == 0.0 {
        return Array3::ones(shape);
    }
    let keep = 1.0 - rate;
    let mut mask = Array3::zeros(shape);
    for v in mask.iter_mut() {
        *v = if rand::Rng::gen::<f64>(rng) < rate { 0.0 } else { 1.0 / keep };
    }
    mask
}

pub fn dropout_mask_2d(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if rate == 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 - rate;
    let mut mask = Array2::zeros(shape);
    for v in mask.iter_mut() {
        *v = if rand::Rng::gen::<f64>(rng) < rate { 0.0 } else { 1.0 / keep };
    }
    mask
}

// -------------------------------------------------------------- max pool

pub struct PoolCache {
    /// Chosen source time index for every pooled output.
    pub argmax: Array3<usize>,
    pub input_time: usize,
}

/// Pool size 2, stride 2, floor semantics: an odd tail sample is dropped.
pub fn maxpool2_forward(x: &Array3<f64>) -> (Array3<f64>, PoolCache) {
    let (batch, channels, time) = x.dim();
    let out_time = time / 2;
    let mut y = Array3::zeros((batch, channels, out_time));
    let mut argmax = Array3::zeros((batch, channels, out_time));
    for b in 0..batch {
        for c in 0..channels {
            for j in 0..out_time {
                let (a, bv) = (x[[b, c, 2 * j]], x[[b, c, 2 * j + 1]]);
                if a >= bv {
                    y[[b, c, j]] = a;
                    argmax[[b, c, j]] = 2 * j;
                } else {
                    y[[b, c, j]] = bv;
                    argmax[[b, c, j]] = 2 * j + 1;
                }
            }
        }
    }
    (
        y,
        PoolCache {
            argmax,
            input_time: time,
        },
    )
}

pub fn maxpool2_backward(cache: &PoolCache, grad_out: &Array3<f64>) -> Array3<f64> {
    let (batch, channels, out_time) = grad_out.dim();
    let mut grad_in = Array3::zeros((batch, channels, cache.input_time));
    for b in 0..batch {
        for c in 0..channels {
            for j in 0..out_time {
                grad_in[[b, c, cache.argmax[[b, c, j]]]] += grad_out[[b, c, j]];
            }
        }
    }
    grad_in
}

// -------------------------------------------------- positional encoding

/// Sinusoidal positional encoding: even dimensions carry
/// sin(pos / omega^(2i/d)), odd dimensions the matching cosine.
pub fn positional_encoding(time: usize, d_model: usize, omega: f64) -> Array2<f64> {
    let inv_freq: Vec<f64> = (0..d_model / 2)
        .map(|i| 1.0 / omega.powf(2.0 * i as f64 / d_model as f64))
        .collect();
    let mut pe = Array2::zeros((time, d_model));
    for pos in 0..time {
        for (i, &f) in inv_freq.iter().enumerate() {
            let angle = pos as f64 * f;
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    pe
}

// ------------------------------------------------------------- attention

#[derive(Debug, Clone)]
pub struct AttnParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

pub struct AttnCache {
    pub input: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Softmaxed attention rows per head, `[T, T]` each.
    pub attn: Vec<Array2<f64>>,
    pub context: Array2<f64>,
}

fn softmax_rows(mut scores: Array2<f64>) -> Array2<f64> {
    for mut row in scores.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    scores
}

/// Multi-head self-attention over one sample `[T, d_model]`; projections
/// have no bias, the output projection concatenates the heads.
pub fn attention_forward(
    params: &AttnParams,
    x: &Array2<f64>,
    heads: usize,
) -> Result<(Array2<f64>, AttnCache)> {
    let (time, d_model) = x.dim();
    if d_model != params.wq.nrows() || d_model % heads != 0 {
        return Err(PcgError::ShapeMismatch(format!(
            "attention: d_model {d_model}, heads {heads}"
        )));
    }
    let dk = d_model / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(&params.wq);
    let k = x.dot(&params.wk);
    let v = x.dot(&params.wv);
    let mut context = Array2::zeros((time, d_model));
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = ndarray::s![.., h * dk..(h + 1) * dk];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let scores = qh.dot(&kh.t()).mapv(|s| s * scale);
        let a = softmax_rows(scores);
        let out = a.dot(&vh);
        context.slice_mut(cols).assign(&out);
        attn.push(a);
    }
    let y = context.dot(&params.wo);
    Ok((
        y,
        AttnCache {
            input: x.clone(),
            q,
            k,
            v,
            attn,
            context,
        },
    ))
}

pub fn attention_backward(
    params: &AttnParams,
    cache: &AttnCache,
    grad_out: &Array2<f64>,
    heads: usize,
) -> (Array2<f64>, AttnParams) {
    let (time, d_model) = cache.input.dim();
    let dk = d_model / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let grad_wo = cache.context.t().dot(grad_out);
    let grad_context = grad_out.dot(&params.wo.t());

    let mut grad_q = Array2::zeros((time, d_model));
    let mut grad_k = Array2::zeros((time, d_model));
    let mut grad_v = Array2::zeros((time, d_model));
    for h in 0..heads {
        let cols = ndarray::s![.., h * dk..(h + 1) * dk];
        let a = &cache.attn[h];
        let gh = grad_context.slice(cols);
        let vh = cache.v.slice(cols);
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);

        let grad_a = gh.dot(&vh.t());
        grad_v.slice_mut(cols).assign(&a.t().dot(&gh));

        // softmax backward per row: dS = A .* (dA - rowsum(dA .* A))
        let mut grad_s = Array2::zeros((time, time));
        for r in 0..time {
            let dot: f64 = (0..time).map(|c| grad_a[[r, c]] * a[[r, c]]).sum();
            for c in 0..time {
                grad_s[[r, c]] = a[[r, c]] * (grad_a[[r, c]] - dot);
            }
        }
        grad_q
            .slice_mut(cols)
            .assign(&grad_s.dot(&kh).mapv(|v| v * scale));
        grad_k
            .slice_mut(cols)
            .assign(&grad_s.t().dot(&qh).mapv(|v| v * scale));
    }

    let x = &cache.input;
    let grad_wq = x.t().dot(&grad_q);
    let grad_wk = x.t().dot(&grad_k);
    let grad_wv = x.t().dot(&grad_v);
    let grad_in =
        grad_q.dot(&params.wq.t()) + grad_k.dot(&params.wk.t()) + grad_v.dot(&params.wv.t());
    (
        grad_in,
        AttnParams {
            wq: grad_wq,
            wk: grad_wk,
            wv: grad_wv,
            wo: grad_wo,
        },
    )
}

// ------------------------------------------------------------------- ffn

#[derive(Debug, Clone)]
pub struct FfnParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub struct FfnCache {
    pub input: Array2<f64>,
    pub hidden_mask: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// Position-wise feed-forward: relu(x W1 + b1) W2 + b2.
pub fn ffn_forward(params: &FfnParams, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
    let mut hidden_pre = x.dot(&params.w1);
    hidden_pre += &params.b1;
    let hidden_mask = hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let mut y = hidden.dot(&params.w2);
    y += &params.b2;
    (
        y,
        FfnCache {
            input: x.clone(),
            hidden_mask,
            hidden,
        },
    )
}

pub fn ffn_backward(
    params: &FfnParams,
    cache: &FfnCache,
    grad_out: &Array2<f64>,
) -> (Array2<f64>, FfnParams) {
    let grad_w2 = cache.hidden.t().dot(grad_out);
    let grad_b2 = grad_out.sum_axis(Axis(0));
    let grad_hidden = grad_out.dot(&params.w2.t()) * &cache.hidden_mask;
    let grad_w1 = cache.input.t().dot(&grad_hidden);
    let grad_b1 = grad_hidden.sum_axis(Axis(0));
    let grad_in = grad_hidden.dot(&params.w1.t());
    (
        grad_in,
        FfnParams {
            w1: grad_w1,
            b1: grad_b1,
            w2: grad_w2,
            b2: grad_b2,
        },
    )
}

// ---------------------------------------------------------- fully connected

#[derive(Debug, Clone)]
pub struct FcParams {
    /// `[in, out]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub struct FcCache {
    pub input: Array2<f64>,
}

pub fn fc_forward(params: &FcParams, x: &Array2<f64>) -> (Array2<f64>, FcCache) {
    let mut y = x.dot(&params.weight);
    y += &params.bias;
    (y, FcCache { input: x.clone() })
}

pub fn fc_backward(
    params: &FcParams,
    cache: &FcCache,
    grad_out: &Array2<f64>,
) -> (Array2<f64>, FcParams) {
    let grad_w = cache.input.t().dot(grad_out);
    let grad_b = grad_out.sum_axis(Axis(0));
    let grad_in = grad_out.dot(&params.weight.t());
    (
        grad_in,
        FcParams {
            weight: grad_w,
            bias: grad_b,
        },
    )
}

// ------------------------------------------------------ global average pool

pub fn gap_forward(x: &Array3<f64>) -> Array2<f64> {
    x.mean_axis(Axis(2)).unwrap()
}

pub fn gap_backward(grad_out: &Array2<f64>, time: usize) -> Array3<f64> {
    let (batch, channels) = grad_out.dim();
    let mut grad_in = Array3::zeros((batch, channels, time));
    let inv = 1.0 / time as f64;
    for b in 0..batch {
        for c in 0..channels {
            let g = grad_out[[b, c]] * inv;
            for t in 0..time {
                grad_in[[b, c, t]] = g;
            }
        }
    }
    grad_in
}

// --------------------------------------------------- softmax + weighted CE

/// Row softmax of logits.
pub fn softmax_2d(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Class-weighted cross entropy, averaged over the batch. Returns the loss
/// and its gradient with respect to the logits.
pub fn weighted_cross_entropy(
    probs: &Array2<f64>,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = probs.dim();
    if labels.len() != batch {
        return Err(PcgError::ShapeMismatch(format!(
            "{} labels for batch of {batch}",
            labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((batch, classes));
    let inv_batch = 1.0 / batch as f64;
    for (n, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(PcgError::ShapeMismatch(format!("label {y} out of range")));
        }
        let w = class_weights[y];
        loss -= w * probs[[n, y]].max(1e-300).ln();
        for c in 0..classes {
            let indicator = if c == y { 1.0 } else { 0.0 };
            grad[[n, c]] = w * (probs[[n, c]] - indicator) * inv_batch;
        }
    }
    Ok((loss * inv_batch, grad))
}
