//! The transformer-based residual 1D CNN classifier.
//!
//! Layout: conv(39->32)+BN+ReLU feature encoder, a stack of Block-1 units
//! (conv -> positional encoding -> transformer layer -> BN, plus a
//! conv1x1+BN residual path, merged before ReLU, then dropout and max-pool)
//! followed by Block-2 units (the same minus dropout and pooling), and a
//! decoder of global-average-pool -> dropout -> fc+ReLU -> fc -> softmax.

pub mod checkpoint;
pub mod layers;
pub mod train;

use crate::config::ModelConfig;
use crate::error::{PcgError, Result};
use crate::rng::{next_gaussian, stream};
use layers::*;
use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Positional-encoding base.
pub const PE_OMEGA: f64 = 10_000.0;
/// Feature rows the model consumes.
pub const INPUT_CHANNELS: usize = 39;
/// CHD vs non-CHD.
pub const NUM_CLASSES: usize = 2;

/// Everything needed to rebuild the parameter tensors of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub channels: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub dropout: f64,
    pub block1_count: usize,
    pub block2_count: usize,
    pub classes: usize,
    pub pe_omega: f64,
}

impl Architecture {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            input_channels: INPUT_CHANNELS,
            channels: cfg.channels,
            heads: cfg.heads,
            ffn_width: cfg.ffn_width,
            dropout: cfg.dropout,
            block1_count: cfg.block1_count,
            block2_count: cfg.block2_count,
            classes: NUM_CLASSES,
            pe_omega: PE_OMEGA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(PcgError::Config("heads must divide channels".into()));
        }
        if self.channels % 2 != 0 {
            return Err(PcgError::Config("channels must be even for the positional encoding".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PcgError::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Minimum input length so every Block-1 pool keeps at least one frame.
    pub fn min_time(&self) -> usize {
        1 << self.block1_count
    }

    pub fn transformer_layer_count(&self) -> usize {
        self.block1_count + self.block2_count
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub conv: ConvParams,
    pub attn: AttnParams,
    pub ffn: FfnParams,
    pub bn: BnParams,
    pub res_conv: ConvParams,
    pub res_bn: BnParams,
}

/// All learnable tensors plus batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub arch: Architecture,
    pub enc_conv: ConvParams,
    pub enc_bn: BnParams,
    pub blocks1: Vec<BlockParams>,
    pub blocks2: Vec<BlockParams>,
    pub fc1: FcParams,
    pub fc2: FcParams,
}

fn zero_conv(out_ch: usize, in_ch: usize, kernel: usize) -> ConvParams {
    ConvParams {
        weight: Array3::zeros((out_ch, in_ch, kernel)),
        bias: Array1::zeros(out_ch),
    }
}

fn zero_block(channels: usize, ffn_width: usize) -> BlockParams {
    BlockParams {
        conv: zero_conv(channels, channels, 3),
        attn: AttnParams {
            wq: Array2::zeros((channels, channels)),
            wk: Array2::zeros((channels, channels)),
            wv: Array2::zeros((channels, channels)),
            wo: Array2::zeros((channels, channels)),
        },
        ffn: FfnParams {
            w1: Array2::zeros((channels, ffn_width)),
            b1: Array1::zeros(ffn_width),
            w2: Array2::zeros((ffn_width, channels)),
            b2: Array1::zeros(channels),
        },
        bn: BnParams::identity(channels),
        res_conv: zero_conv(channels, channels, 1),
        res_bn: BnParams::identity(channels),
    }
}

impl ModelParams {
    /// Zero weights, identity batch norms.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let c = arch.channels;
        Ok(Self {
            arch: arch.clone(),
            enc_conv: zero_conv(c, arch.input_channels, 3),
            enc_bn: BnParams::identity(c),
            blocks1: (0..arch.block1_count).map(|_| zero_block(c, arch.ffn_width)).collect(),
            blocks2: (0..arch.block2_count).map(|_| zero_block(c, arch.ffn_width)).collect(),
            fc1: FcParams {
                weight: Array2::zeros((c, c)),
                bias: Array1::zeros(c),
            },
            fc2: FcParams {
                weight: Array2::zeros((c, arch.classes)),
                bias: Array1::zeros(arch.classes),
            },
        })
    }

    /// He/Xavier initialization, fully determined by the seed.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut counter = 0u64;
        let mut fill = |data: &mut [f64], std: f64| {
            let mut rng = stream(seed, "model-init", counter);
            counter += 1;
            for v in data.iter_mut() {
                *v = std * next_gaussian(&mut rng);
            }
        };
        let c = arch.channels as f64;
        let he_conv3 = (2.0 / (arch.input_channels as f64 * 3.0)).sqrt();
        fill(params.enc_conv.weight.as_slice_mut().unwrap(), he_conv3);
        let he_c3 = (2.0 / (c * 3.0)).sqrt();
        let he_c1 = (2.0 / c).sqrt();
        let xavier = (1.0 / c).sqrt();
        let he_ffn_in = (2.0 / c).sqrt();
        let he_ffn_out = (2.0 / arch.ffn_width as f64).sqrt();
        for block in params.blocks1.iter_mut().chain(params.blocks2.iter_mut()) {
            fill(block.conv.weight.as_slice_mut().unwrap(), he_c3);
            fill(block.attn.wq.as_slice_mut().unwrap(), xavier);
            fill(block.attn.wk.as_slice_mut().unwrap(), xavier);
            fill(block.attn.wv.as_slice_mut().unwrap(), xavier);
            fill(block.attn.wo.as_slice_mut().unwrap(), xavier);
            fill(block.ffn.w1.as_slice_mut().unwrap(), he_ffn_in);
            fill(block.ffn.w2.as_slice_mut().unwrap(), he_ffn_out);
            fill(block.res_conv.weight.as_slice_mut().unwrap(), he_c1);
        }
        fill(params.fc1.weight.as_slice_mut().unwrap(), he_c1);
        fill(params.fc2.weight.as_slice_mut().unwrap(), xavier);
        Ok(params)
    }
}

/// Named view of one tensor; `trainable` is false for running statistics.
pub struct TensorRef<'a> {
    pub name: String,
    pub trainable: bool,
    pub view: ArrayViewD<'a, f64>,
}

pub struct TensorMut<'a> {
    pub name: String,
    pub trainable: bool,
    pub view: ArrayViewMutD<'a, f64>,
}

macro_rules! visit_impl {
    ($self:expr, $view:ident, $iter:ident, $wrap:ident) => {{
        let mut out = Vec::new();
        macro_rules! push {
            ($field:expr, $name:expr, $trainable:expr) => {
                out.push($wrap {
                    name: $name,
                    trainable: $trainable,
                    view: $field.$view().into_dyn(),
                });
            };
        }
        push!($self.enc_conv.weight, "encoder.conv.weight".to_string(), true);
        push!($self.enc_conv.bias, "encoder.conv.bias".to_string(), true);
        push!($self.enc_bn.gamma, "encoder.bn.gamma".to_string(), true);
        push!($self.enc_bn.beta, "encoder.bn.beta".to_string(), true);
        push!($self.enc_bn.running_mean, "encoder.bn.running_mean".to_string(), false);
        push!($self.enc_bn.running_var, "encoder.bn.running_var".to_string(), false);
        for (kind, blocks) in [
            ("block1", $self.blocks1.$iter()),
            ("block2", $self.blocks2.$iter()),
        ] {
            for (i, block) in blocks.enumerate() {
                push!(block.conv.weight, format!("{kind}.{i}.conv.weight"), true);
                push!(block.conv.bias, format!("{kind}.{i}.conv.bias"), true);
                push!(block.attn.wq, format!("{kind}.{i}.attn.wq"), true);
                push!(block.attn.wk, format!("{kind}.{i}.attn.wk"), true);
                push!(block.attn.wv, format!("{kind}.{i}.attn.wv"), true);
                push!(block.attn.wo, format!("{kind}.{i}.attn.wo"), true);
                push!(block.ffn.w1, format!("{kind}.{i}.ffn.w1"), true);
                push!(block.ffn.b1, format!("{kind}.{i}.ffn.b1"), true);
                push!(block.ffn.w2, format!("{kind}.{i}.ffn.w2"), true);
                push!(block.ffn.b2, format!("{kind}.{i}.ffn.b2"), true);
                push!(block.bn.gamma, format!("{kind}.{i}.bn.gamma"), true);
                push!(block.bn.beta, format!("{kind}.{i}.bn.beta"), true);
                push!(block.bn.running_mean, format!("{kind}.{i}.bn.running_mean"), false);
                push!(block.bn.running_var, format!("{kind}.{i}.bn.running_var"), false);
                push!(block.res_conv.weight, format!("{kind}.{i}.res_conv.weight"), true);
                push!(block.res_conv.bias, format!("{kind}.{i}.res_conv.bias"), true);
                push!(block.res_bn.gamma, format!("{kind}.{i}.res_bn.gamma"), true);
                push!(block.res_bn.beta, format!("{kind}.{i}.res_bn.beta"), true);
                push!(block.res_bn.running_mean, format!("{kind}.{i}.res_bn.running_mean"), false);
                push!(block.res_bn.running_var, format!("{kind}.{i}.res_bn.running_var"), false);
            }
        }
        push!($self.fc1.weight, "decoder.fc1.weight".to_string(), true);
        push!($self.fc1.bias, "decoder.fc1.bias".to_string(), true);
        push!($self.fc2.weight, "decoder.fc2.weight".to_string(), true);
        push!($self.fc2.bias, "decoder.fc2.bias".to_string(), true);
        out
    }};
}

impl ModelParams {
    /// All tensors in a fixed order, running statistics included.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        visit_impl!(self, view, iter, TensorRef)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        visit_impl!(self, view_mut, iter_mut, TensorMut)
    }
}

// ------------------------------------------------------------------ forward

enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

struct TransformerCache {
    attn: AttnCache,
    attn_drop: Array2<f64>,
    ffn: FfnCache,
    ffn_drop: Array2<f64>,
}

struct BlockCache {
    conv: ConvCache,
    transformer: Vec<TransformerCache>,
    bn: BnCache,
    res_conv: ConvCache,
    res_bn: BnCache,
    relu_mask: Array3<f64>,
    block_drop: Option<Array3<f64>>,
    pool: Option<PoolCache>,
}

/// Everything the backward pass needs from one training forward pass.
pub struct ModelCache {
    enc_conv: ConvCache,
    enc_bn: BnCache,
    enc_relu_mask: Array3<f64>,
    blocks: Vec<BlockCache>,
    pre_gap_time: usize,
    gap_drop: Array2<f64>,
    fc1: FcCache,
    fc1_relu_mask: Array2<f64>,
    fc2: FcCache,
    pub probs: Array2<f64>,
}

/// Per-transformer-layer activations captured for export.
pub struct Activations {
    /// Output of each transformer layer, `[T, d_model]`.
    pub transformer_layers: Vec<Array2<f64>>,
    /// Global-average-pool vector.
    pub pooled: Array1<f64>,
}

fn transformer_layer(
    block: &BlockParams,
    x: &Array2<f64>,
    heads: usize,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<(Array2<f64>, TransformerCache)> {
    let (attn_out, attn_cache) = attention_forward(&block.attn, x, heads)?;
    let attn_drop = match mode {
        Mode::Eval => Array2::ones(attn_out.dim()),
        Mode::Train { rng } => dropout_mask_2d(attn_out.dim(), dropout, rng),
    };
    let h1 = x + &(&attn_out * &attn_drop);
    let (ffn_out, ffn_cache) = ffn_forward(&block.ffn, &h1);
    let ffn_drop = match mode {
        Mode::Eval => Array2::ones(ffn_out.dim()),
        Mode::Train { rng } => dropout_mask_2d(ffn_out.dim(), dropout, rng),
    };
    let h2 = &h1 + &(&ffn_out * &ffn_drop);
    Ok((
        h2,
        TransformerCache {
            attn: attn_cache,
            attn_drop,
            ffn: ffn_cache,
            ffn_drop,
        },
    ))
}

fn transformer_layer_backward(
    block: &BlockParams,
    cache: &TransformerCache,
    grad_out: &Array2<f64>,
    heads: usize,
) -> (Array2<f64>, AttnParams, FfnParams) {
    // h2 = h1 + ffn(h1) * mask
    let grad_ffn_out = grad_out * &cache.ffn_drop;
    let (grad_h1_via_ffn, ffn_grads) = ffn_backward(&block.ffn, &cache.ffn, &grad_ffn_out);
    let grad_h1 = grad_out + &grad_h1_via_ffn;
    // h1 = x + attn(x) * mask
    let grad_attn_out = &grad_h1 * &cache.attn_drop;
    let (grad_x_via_attn, attn_grads) =
        attention_backward(&block.attn, &cache.attn, &grad_attn_out, heads);
    let grad_x = &grad_h1 + &grad_x_via_attn;
    (grad_x, attn_grads, ffn_grads)
}

/// Transpose `[B, C, T]` -> per-sample `[T, C]` views and back.
fn to_time_major(x: &Array3<f64>, b: usize) -> Array2<f64> {
    let (_, channels, time) = x.dim();
    Array2::from_shape_fn((time, channels), |(t, c)| x[[b, c, t]])
}

fn from_time_major(batch: &[Array2<f64>]) -> Array3<f64> {
    let (time, channels) = batch[0].dim();
    let mut out = Array3::zeros((batch.len(), channels, time));
    for (b, m) in batch.iter().enumerate() {
        for t in 0..time {
            for c in 0..channels {
                out[[b, c, t]] = m[[t, c]];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn block_forward(
    block: &mut BlockParams,
    x: &Array3<f64>,
    arch: &Architecture,
    is_block1: bool,
    mode: &mut Mode<'_>,
    capture: &mut Option<&mut Vec<Array2<f64>>>,
) -> Result<(Array3<f64>, Option<BlockCache>)> {
    let train = matches!(mode, Mode::Train { .. });
    let (conv_out, conv_cache) = conv1d_forward(&block.conv, x)?;
    let (batch, _, time) = conv_out.dim();
    let pe = positional_encoding(time, arch.channels, arch.pe_omega);

    let mut tr_outs: Vec<Array2<f64>> = Vec::with_capacity(batch);
    let mut tr_caches: Vec<TransformerCache> = Vec::with_capacity(batch);
    for b in 0..batch {
        let xt = to_time_major(&conv_out, b) + &pe;
        let (out, cache) = transformer_layer(block, &xt, arch.heads, arch.dropout, mode)?;
        if let Some(capture) = capture.as_deref_mut() {
            capture.push(out.clone());
        }
        tr_outs.push(out);
        tr_caches.push(cache);
    }
    let pre_bn = from_time_major(&tr_outs);

    let (main, bn_cache) = if train {
        let (y, c) = batch_norm_train(&mut block.bn, &pre_bn)?;
        (y, Some(c))
    } else {
        (batch_norm_eval(&block.bn, &pre_bn), None)
    };

    let (res_pre, res_conv_cache) = conv1d_forward(&block.res_conv, x)?;
    let (res, res_bn_cache) = if train {
        let (y, c) = batch_norm_train(&mut block.res_bn, &res_pre)?;
        (y, Some(c))
    } else {
        (batch_norm_eval(&block.res_bn, &res_pre), None)
    };

    let merged = &main + &res;
    let (mut out, relu_mask) = relu_forward(&merged);

    let mut block_drop = None;
    let mut pool_cache = None;
    if is_block1 {
        if let Mode::Train { rng } = mode {
            let mask = dropout_mask_3d(out.dim(), arch.dropout, rng);
            out = &out * &mask;
            block_drop = Some(mask);
        }
        let (pooled, pc) = maxpool2_forward(&out);
        out = pooled;
        pool_cache = Some(pc);
    }

    let cache = if train {
        Some(BlockCache {
            conv: conv_cache,
            transformer: tr_caches,

            bn: bn_cache.unwrap(),
            res_conv: res_conv_cache,
            res_bn: res_bn_cache.unwrap(),
            relu_mask,
            block_drop,
            pool: pool_cache,
        })
    } else {
        None
    };
    Ok((out, cache))
}

fn forward_impl(
    params: &mut ModelParams,
    x: &Array3<f64>,
    mode: &mut Mode<'_>,
    mut capture: Option<&mut Activations>,
) -> Result<(Array2<f64>, Option<ModelCache>)> {
    let arch = params.arch.clone();
    let (batch, channels, time) = x.dim();
    if channels != arch.input_channels {
        return Err(PcgError::ShapeMismatch(format!(
            "expected {} input channels, got {channels}",
            arch.input_channels
        )));
    }
    if time < arch.min_time() {
        return Err(PcgError::ShapeMismatch(format!(
            "time axis {time} shorter than the pooling floor {}",
            arch.min_time()
        )));
    }
    if batch == 0 {
        return Err(PcgError::ShapeMismatch("empty batch".into()));
    }
    let train = matches!(mode, Mode::Train { .. });

    let (enc, enc_conv_cache) = conv1d_forward(&params.enc_conv, x)?;
    let (enc_bn_out, enc_bn_cache) = if train {
        let (y, c) = batch_norm_train(&mut params.enc_bn, &enc)?;
        (y, Some(c))
    } else {
        (batch_norm_eval(&params.enc_bn, &enc), None)
    };
    let (mut h, enc_relu_mask) = relu_forward(&enc_bn_out);

    let mut layer_capture: Option<Vec<Array2<f64>>> = capture.as_ref().map(|_| Vec::new());
    let mut block_caches = Vec::new();
    let block1_count = params.blocks1.len();
    for i in 0..block1_count {
        let mut cap_ref = layer_capture.as_mut();
        let (out, cache) = block_forward(&mut params.blocks1[i], &h, &arch, true, mode, &mut cap_ref)?;
        h = out;
        if let Some(c) = cache {
            block_caches.push(c);
        }
    }
    let block2_count = params.blocks2.len();
    for i in 0..block2_count {
        let mut cap_ref = layer_capture.as_mut();
        let (out, cache) = block_forward(&mut params.blocks2[i], &h, &arch, false, mode, &mut cap_ref)?;
        h = out;
        if let Some(c) = cache {
            block_caches.push(c);
        }
    }

    let pre_gap_time = h.dim().2;
    let pooled = gap_forward(&h);
    let gap_drop = match mode {
        Mode::Eval => Array2::ones(pooled.dim()),
        Mode::Train { rng } => dropout_mask_2d(pooled.dim(), arch.dropout, rng),
    };
    let pooled_dropped = &pooled * &gap_drop;
    let (fc1_out, fc1_cache) = fc_forward(&params.fc1, &pooled_dropped);
    let fc1_relu_mask = fc1_out.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let fc1_act = fc1_out.mapv(|v| v.max(0.0));
    let (logits, fc2_cache) = fc_forward(&params.fc2, &fc1_act);
    let probs = softmax_2d(&logits);

    if let Some(acts) = capture.as_deref_mut() {
        // per-sample capture only makes sense for batch of 1
        acts.transformer_layers = layer_capture.unwrap_or_default();
        acts.pooled = pooled.row(0).to_owned();
    }

    let cache = if train {
        Some(ModelCache {
            enc_conv: enc_conv_cache,
            enc_bn: enc_bn_cache.unwrap(),
            enc_relu_mask,
            blocks: block_caches,
            pre_gap_time,
            gap_drop,
            fc1: fc1_cache,
            fc1_relu_mask,
            fc2: fc2_cache,
            probs: probs.clone(),
        })
    } else {
        None
    };
    Ok((probs, cache))
}

/// Inference forward pass: deterministic, running-stat batch norm, dropout
/// disabled. Input `[batch, 39, T]`, output class probabilities `[batch, 2]`.
pub fn forward_eval(params: &ModelParams, x: &Array3<f64>) -> Result<Array2<f64>> {
    let mut scratch = params.clone();
    let (probs, _) = forward_impl(&mut scratch, x, &mut Mode::Eval, None)?;
    Ok(probs)
}

/// Training forward pass: batch statistics (updated in place), dropout masks
/// drawn from `rng`. Returns probabilities and the cache for [`backward`].
pub fn forward_train(
    params: &mut ModelParams,
    x: &Array3<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, ModelCache)> {
    let (probs, cache) = forward_impl(params, x, &mut Mode::Train { rng }, None)?;
    Ok((probs, cache.unwrap()))
}

fn block_backward(
    block: &BlockParams,
    cache: &BlockCache,
    grad_out: &Array3<f64>,
    arch: &Architecture,
) -> (Array3<f64>, BlockParams) {
    let mut grad = grad_out.clone();
    if let Some(pool) = &cache.pool {
        grad = maxpool2_backward(pool, &grad);
    }
    if let Some(mask) = &cache.block_drop {
        grad = &grad * mask;
    }
    let grad_merged = relu_backward(&cache.relu_mask, &grad);

    let (grad_res_pre, res_bn_grads) = batch_norm_backward(&block.res_bn, &cache.res_bn, &grad_merged);
    let (grad_x_res, res_conv_grads) = conv1d_backward(&block.res_conv, &cache.res_conv, &grad_res_pre);

    let (grad_pre_bn, bn_grads) = batch_norm_backward(&block.bn, &cache.bn, &grad_merged);

    let batch = grad_pre_bn.dim().0;
    let mut attn_grads_sum: Option<AttnParams> = None;
    let mut ffn_grads_sum: Option<FfnParams> = None;
    let mut per_sample_grads: Vec<Array2<f64>> = Vec::with_capacity(batch);
    for b in 0..batch {
        let g = to_time_major(&grad_pre_bn, b);
        let (gx, attn_g, ffn_g) =
            transformer_layer_backward(block, &cache.transformer[b], &g, arch.heads);
        per_sample_grads.push(gx);
        attn_grads_sum = Some(match attn_grads_sum {
            None => attn_g,
            Some(acc) => AttnParams {
                wq: acc.wq + attn_g.wq,
                wk: acc.wk + attn_g.wk,
                wv: acc.wv + attn_g.wv,
                wo: acc.wo + attn_g.wo,
            },
        });
        ffn_grads_sum = Some(match ffn_grads_sum {
            None => ffn_g,
            Some(acc) => FfnParams {
                w1: acc.w1 + ffn_g.w1,
                b1: acc.b1 + ffn_g.b1,
                w2: acc.w2 + ffn_g.w2,
                b2: acc.b2 + ffn_g.b2,
            },
        });
    }
    // positional encoding adds a constant, so gradients pass through
    let grad_conv_out = from_time_major(&per_sample_grads);
    let (grad_x_main, conv_grads) = conv1d_backward(&block.conv, &cache.conv, &grad_conv_out);

    let grad_in = &grad_x_main + &grad_x_res;
    (
        grad_in,
        BlockParams {
            conv: conv_grads,
            attn: attn_grads_sum.unwrap(),
            ffn: ffn_grads_sum.unwrap(),
            bn: bn_grads,
            res_conv: res_conv_grads,
            res_bn: res_bn_grads,
        },
    )
}

/// Analytic gradients of every trainable tensor given the gradient of the
/// loss with respect to the logits. Running statistics stay zero in the
/// returned structure.
pub fn backward(
    params: &ModelParams,
    cache: &ModelCache,
    grad_logits: &Array2<f64>,
) -> Result<ModelParams> {
    let arch = &params.arch;
    let mut grads = ModelParams::zeros(arch)?;

    let (grad_fc1_act, fc2_grads) = fc_backward(&params.fc2, &cache.fc2, grad_logits);
    grads.fc2 = fc2_grads;
    let grad_fc1_pre = &grad_fc1_act * &cache.fc1_relu_mask;
    let (grad_pooled_dropped, fc1_grads) = fc_backward(&params.fc1, &cache.fc1, &grad_fc1_pre);
    grads.fc1 = fc1_grads;
    let grad_pooled = &grad_pooled_dropped * &cache.gap_drop;
    let mut grad = gap_backward(&grad_pooled, cache.pre_gap_time);

    let block1_count = params.blocks1.len();
    for i in (0..params.blocks2.len()).rev() {
        let cache_idx = block1_count + i;
        let (gx, block_grads) =
            block_backward(&params.blocks2[i], &cache.blocks[cache_idx], &grad, arch);
        grads.blocks2[i] = block_grads;
        grad = gx;
    }
    for i in (0..block1_count).rev() {
        let (gx, block_grads) =
            block_backward(&params.blocks1[i], &cache.blocks[i], &grad, arch);
        grads.blocks1[i] = block_grads;
        grad = gx;
    }

    let grad_enc_bn_out = relu_backward(&cache.enc_relu_mask, &grad);
    let (grad_enc, enc_bn_grads) = batch_norm_backward(&params.enc_bn, &cache.enc_bn, &grad_enc_bn_out);
    grads.enc_bn = enc_bn_grads;
    let (_, enc_conv_grads) = conv1d_backward(&params.enc_conv, &cache.enc_conv, &grad_enc);
    grads.enc_conv = enc_conv_grads;
    Ok(grads)
}

/// Capture the five transformer-layer outputs plus the pooled vector for one
/// input `[39, T]`, in eval mode.
pub fn export_activations(params: &ModelParams, features: &Array2<f64>) -> Result<Activations> {
    let (channels, time) = features.dim();
    let mut x = Array3::zeros((1, channels, time));
    for c in 0..channels {
        for t in 0..time {
            x[[0, c, t]] = features[[c, t]];
        }
    }
    let mut acts = Activations {
        transformer_layers: Vec::new(),
        pooled: Array1::zeros(0),
    };
    let mut scratch = params.clone();
    forward_impl(&mut scratch, &x, &mut Mode::Eval, Some(&mut acts))?;
    Ok(acts)
}
