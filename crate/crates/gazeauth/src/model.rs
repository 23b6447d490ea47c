//! The embedding network: one densely connected block of dilated 1-D
//! convolutions, global average pooling, and a fully connected layer
//! producing a fixed-dimension embedding.
//!
//! Layer 1 convolves the raw input. Every later convolution is preceded
//! by batch norm and ReLU applied to the concatenation of the input and
//! all previous layer outputs, and a final BN+ReLU precedes pooling.
//! Convolutions use stride 1 and zero padding, preserving the window
//! length for every dilation.
//!
//! Gradients are hand-derived for this fixed architecture. Batches are
//! laid out as `(channels, m*T)` matrices so convolutions reduce to a few
//! large matrix products per layer, which is what makes CPU training of
//! the default configuration practical.

use std::path::Path;

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ChannelSpec, NormalizationStats, SavgolConfig, UserId};

/// Hyper-shape of the embedding network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub time_steps: usize,
    pub num_conv_layers: usize,
    /// Feature maps produced by each convolution.
    pub growth: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub embedding_dim: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl NetworkConfig {
    /// Default architecture for a given channel count: 8 conv layers,
    /// growth 32, kernel 3, dilations 1,2,4,8,16,32,64,1, 128-dim output.
    pub fn with_input_channels(input_channels: usize) -> Self {
        NetworkConfig {
            input_channels,
            time_steps: crate::signal::WINDOW_SAMPLES,
            num_conv_layers: 8,
            growth: 32,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8, 16, 32, 64, 1],
            embedding_dim: 128,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.time_steps == 0 || self.growth == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.num_conv_layers == 0 {
            return Err(Error::Config("need at least one conv layer".into()));
        }
        if self.dilations.len() != self.num_conv_layers {
            return Err(Error::Config(format!(
                "dilations length {} != num_conv_layers {}",
                self.dilations.len(),
                self.num_conv_layers
            )));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("dilations must be strictly positive".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config("kernel_size must be odd (length-preserving zero padding)".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("invalid batch-norm epsilon/momentum".into()));
        }
        Ok(())
    }

    /// Channels entering conv layer `li` (0-based): C + g*li.
    pub fn conv_in_channels(&self, li: usize) -> usize {
        self.input_channels + self.growth * li
    }

    /// Channels of the full concatenation: C + L*g.
    pub fn concat_channels(&self) -> usize {
        self.input_channels + self.growth * self.num_conv_layers
    }

    /// Width of BN layer `j`: BN j < L-1 precedes conv j+1 (0-based),
    /// BN L-1 is the final one over the full concatenation.
    fn bn_width(&self, j: usize) -> usize {
        if j + 1 < self.num_conv_layers {
            self.conv_in_channels(j + 1)
        } else {
            self.concat_channels()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    /// (out, in, kernel)
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// All trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub convs: Vec<ConvParams>,
    pub bns: Vec<BnParams>,
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
}

impl NetworkParams {
    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        config.validate()?;
        if self.convs.len() != config.num_conv_layers || self.bns.len() != config.num_conv_layers {
            return Err(Error::Config("parameter layer count mismatch".into()));
        }
        for (li, conv) in self.convs.iter().enumerate() {
            let want = (config.growth, config.conv_in_channels(li), config.kernel_size);
            if conv.weight.dim() != want {
                return Err(Error::Config(format!(
                    "conv layer {li}: weight shape {:?}, expected {:?}",
                    conv.weight.dim(),
                    want
                )));
            }
            if conv.bias.len() != config.growth {
                return Err(Error::Config(format!("conv layer {li}: bias length mismatch")));
            }
        }
        for (j, bn) in self.bns.iter().enumerate() {
            let w = config.bn_width(j);
            if bn.scale.len() != w || bn.shift.len() != w || bn.running_mean.len() != w || bn.running_var.len() != w {
                return Err(Error::Config(format!("bn layer {j}: width mismatch")));
            }
            if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config(format!("bn layer {j}: running variance must be positive")));
            }
        }
        if self.fc_weight.dim() != (config.embedding_dim, config.concat_channels()) {
            return Err(Error::Config("fc weight shape mismatch".into()));
        }
        if self.fc_bias.len() != config.embedding_dim {
            return Err(Error::Config("fc bias length mismatch".into()));
        }
        let finite = self.convs.iter().all(|c| c.weight.iter().all(|v| v.is_finite()) && c.bias.iter().all(|v| v.is_finite()))
            && self.fc_weight.iter().all(|v| v.is_finite())
            && self.fc_bias.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(())
    }
}

/// Deterministic initialization: conv/FC weights and biases drawn from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); BN scale 1, shift 0, running mean 0,
/// running variance 1. Draw order is fixed (convs in layer order, weight
/// before bias, then FC weight, FC bias).
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |bound: f64, rng: &mut ChaCha8Rng| (rng.gen::<f64>() * 2.0 - 1.0) * bound;

    let mut convs = Vec::with_capacity(config.num_conv_layers);
    for li in 0..config.num_conv_layers {
        let cin = config.conv_in_channels(li);
        let bound = 1.0 / ((cin * config.kernel_size) as f64).sqrt();
        let mut weight = Array3::zeros((config.growth, cin, config.kernel_size));
        for v in weight.iter_mut() {
            *v = uniform(bound, &mut rng);
        }
        let mut bias = Array1::zeros(config.growth);
        for v in bias.iter_mut() {
            *v = uniform(bound, &mut rng);
        }
        convs.push(ConvParams { weight, bias });
    }
    let mut bns = Vec::with_capacity(config.num_conv_layers);
    for j in 0..config.num_conv_layers {
        let w = config.bn_width(j);
        bns.push(BnParams {
            scale: Array1::ones(w),
            shift: Array1::zeros(w),
            running_mean: Array1::zeros(w),
            running_var: Array1::ones(w),
        });
    }
    let cat = config.concat_channels();
    let bound = 1.0 / (cat as f64).sqrt();
    let mut fc_weight = Array2::zeros((config.embedding_dim, cat));
    for v in fc_weight.iter_mut() {
        *v = uniform(bound, &mut rng);
    }
    let mut fc_bias = Array1::zeros(config.embedding_dim);
    for v in fc_bias.iter_mut() {
        *v = uniform(bound, &mut rng);
    }
    Ok(NetworkParams {
        convs,
        bns,
        fc_weight,
        fc_bias,
    })
}

// ---------------------------------------------------------------------------
// Batched forward/backward engine.
//
// A batch of m windows is stored as a (channels, m*T) matrix; window w
// occupies columns [w*T, (w+1)*T). A convolution with kernel offsets
// {-d, 0, +d} is three matrix products against per-window shifted copies
// of the input (zero padded at each window's edges).
// ---------------------------------------------------------------------------

/// Activations cached by a train-mode forward pass for backprop.
pub struct BatchCache {
    /// Concatenated raw input and all conv outputs, pre-BN: (C+L*g, m*T).
    buf: Array2<f64>,
    /// Per BN layer: normalized activations xhat over BN width.
    xhats: Vec<Array2<f64>>,
    /// Per BN layer: per-channel batch variances.
    vars: Vec<Array1<f64>>,
    /// Globally averaged features per window: (m, C+L*g).
    pooled: Array2<f64>,
    m: usize,
}

/// Accumulate `src` into `dst` with the reverse shift: dst[:, t+off] += src[:, t].
fn shifted_accumulate(dst: &mut ndarray::ArrayViewMut2<f64>, src: &ArrayView2<f64>, off: i64, m: usize, t: usize) {
    let cols = m * t;
    let rows = dst.nrows();
    let d = dst.as_slice_mut().expect("dst contiguous");
    let s = src.to_slice().expect("src contiguous");
    let (src_lo, dst_lo, len) = if off >= 0 {
        let o = (off as usize).min(t);
        (0usize, o, t - o)
    } else {
        let o = ((-off) as usize).min(t);
        (o, 0usize, t - o)
    };
    if len == 0 {
        return;
    }
    for r in 0..rows {
        for w in 0..m {
            let base = r * cols + w * t;
            let drow = &mut d[base + dst_lo..base + dst_lo + len];
            let srow = &s[base + src_lo..base + src_lo + len];
            for i in 0..len {
                drow[i] += srow[i];
            }
        }
    }
}

/// Copy `src` into `dst` shifted by `off` columns within each window,
/// zero-filling the columns that fall outside the window.
fn shifted_copy_view(
    dst: &mut ndarray::ArrayViewMut2<f64>,
    src: &ArrayView2<f64>,
    off: i64,
    m: usize,
    t: usize,
) {
    let cols = m * t;
    let rows = dst.nrows();
    let d = dst.as_slice_mut().expect("dst contiguous");
    let s = src.to_slice().expect("src contiguous");
    for r in 0..rows {
        for w in 0..m {
            let base = r * cols + w * t;
            if off >= 0 {
                let o = (off as usize).min(t);
                let len = t - o;
                d[base..base + len].copy_from_slice(&s[base + o..base + t]);
                d[base + len..base + t].fill(0.0);
            } else {
                let o = ((-off) as usize).min(t);
                let len = t - o;
                d[base..base + o].fill(0.0);
                d[base + o..base + t].copy_from_slice(&s[base..base + len]);
            }
        }
    }
}

/// y[out_rows] = bias + sum_k w_k . shift(x, off_k)
fn conv_forward(
    out: &mut ndarray::ArrayViewMut2<f64>,
    input: &ArrayView2<f64>,
    conv: &ConvParams,
    dilation: usize,
    m: usize,
    t: usize,
    scratch: &mut Array2<f64>,
) {
    let k = conv.weight.dim().2;
    let center = (k - 1) / 2;
    for (o, mut row) in out.rows_mut().into_iter().enumerate() {
        row.fill(conv.bias[o]);
    }
    for ki in 0..k {
        let off = (ki as i64 - center as i64) * dilation as i64;
        let w_k = conv.weight.slice(s![.., .., ki]);
        if off == 0 {
            general_mat_mul(1.0, &w_k, input, 1.0, out);
        } else {
            {
                let mut sc = scratch.slice_mut(s![..input.nrows(), ..]);
                shifted_copy_view(&mut sc, input, off, m, t);
            }
            let sc_view = scratch.slice(s![..input.nrows(), ..]);
            general_mat_mul(1.0, &w_k, &sc_view, 1.0, out);
        }
    }
}

/// Gradients of every parameter group, shaped like [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub convs: Vec<(Array3<f64>, Array1<f64>)>,
    pub bns: Vec<(Array1<f64>, Array1<f64>)>,
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        ParamGrads {
            convs: params
                .convs
                .iter()
                .map(|c| (Array3::zeros(c.weight.dim()), Array1::zeros(c.bias.len())))
                .collect(),
            bns: params
                .bns
                .iter()
                .map(|b| (Array1::zeros(b.scale.len()), Array1::zeros(b.shift.len())))
                .collect(),
            fc_weight: Array2::zeros(params.fc_weight.dim()),
            fc_bias: Array1::zeros(params.fc_bias.len()),
        }
    }

    /// Visit every gradient tensor as a flat slice, in a fixed order.
    pub fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for (w, b) in &mut self.convs {
            f(w.as_slice_mut().unwrap());
            f(b.as_slice_mut().unwrap());
        }
        for (s, h) in &mut self.bns {
            f(s.as_slice_mut().unwrap());
            f(h.as_slice_mut().unwrap());
        }
        f(self.fc_weight.as_slice_mut().unwrap());
        f(self.fc_bias.as_slice_mut().unwrap());
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        let mut probe = |s: &[f64]| {
            for v in s {
                m = m.max(v.abs());
            }
        };
        for (w, b) in &self.convs {
            probe(w.as_slice().unwrap());
            probe(b.as_slice().unwrap());
        }
        for (s, h) in &self.bns {
            probe(s.as_slice().unwrap());
            probe(h.as_slice().unwrap());
        }
        probe(self.fc_weight.as_slice().unwrap());
        probe(self.fc_bias.as_slice().unwrap());
        m
    }
}

/// Visit matched (parameter, gradient-shaped) flat slices of trainable
/// tensors in a fixed order. BN running statistics are not trainable and
/// are skipped.
pub fn visit_trainable(params: &mut NetworkParams, mut f: impl FnMut(usize, &mut [f64])) {
    let mut idx = 0;
    for c in &mut params.convs {
        f(idx, c.weight.as_slice_mut().unwrap());
        idx += 1;
        f(idx, c.bias.as_slice_mut().unwrap());
        idx += 1;
    }
    for b in &mut params.bns {
        f(idx, b.scale.as_slice_mut().unwrap());
        idx += 1;
        f(idx, b.shift.as_slice_mut().unwrap());
        idx += 1;
    }
    f(idx, params.fc_weight.as_slice_mut().unwrap());
    idx += 1;
    f(idx, params.fc_bias.as_slice_mut().unwrap());
}

/// Grad slices in the same fixed order as [`visit_trainable`].
pub fn grad_slices(grads: &ParamGrads) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for (w, b) in &grads.convs {
        out.push(w.as_slice().unwrap());
        out.push(b.as_slice().unwrap());
    }
    for (s, h) in &grads.bns {
        out.push(s.as_slice().unwrap());
        out.push(h.as_slice().unwrap());
    }
    out.push(grads.fc_weight.as_slice().unwrap());
    out.push(grads.fc_bias.as_slice().unwrap());
    out
}

fn stack_windows(config: &NetworkConfig, windows: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let c = config.input_channels;
    let t = config.time_steps;
    let m = windows.len();
    if m == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let mut buf = Array2::zeros((config.concat_channels(), m * t));
    for (w, win) in windows.iter().enumerate() {
        if win.dim() != (c, t) {
            return Err(Error::Data(format!(
                "window {w} has shape {:?}, expected ({c}, {t})",
                win.dim()
            )));
        }
        buf.slice_mut(s![..c, w * t..(w + 1) * t]).assign(win);
    }
    Ok(buf)
}

/// Deterministic 4-lane unrolled sum: fixed association order regardless
/// of platform, and vectorizable.
#[inline]
fn sum_unrolled(s: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = s.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for v in rem {
        total += v;
    }
    total
}

#[inline]
fn sum_sq_dev_unrolled(s: &[f64], mean: f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = s.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        let d0 = c[0] - mean;
        let d1 = c[1] - mean;
        let d2 = c[2] - mean;
        let d3 = c[3] - mean;
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for v in rem {
        let d = v - mean;
        total += d * d;
    }
    total
}

fn bn_batch_stats(rows: &ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = rows.ncols() as f64;
    let mut mean = Array1::zeros(rows.nrows());
    let mut var = Array1::zeros(rows.nrows());
    for (i, row) in rows.rows().into_iter().enumerate() {
        let s = row.to_slice().expect("bn rows are contiguous");
        let m = sum_unrolled(s) / n;
        mean[i] = m;
        var[i] = sum_sq_dev_unrolled(s, m) / n;
    }
    (mean, var)
}

/// Train-mode forward over a batch. Batch norm uses batch statistics and
/// updates running statistics in place. Returns per-window embeddings
/// (m x embedding_dim) and the cache needed for [`backward_batch`].
pub fn forward_train_batch(
    params: &mut NetworkParams,
    config: &NetworkConfig,
    windows: &[ArrayView2<f64>],
) -> Result<(Array2<f64>, BatchCache)> {
    params.validate(config)?;
    let m = windows.len();
    let t = config.time_steps;
    let cols = m * t;
    let c = config.input_channels;
    let g = config.growth;
    let l = config.num_conv_layers;
    let mut buf = stack_windows(config, windows)?;
    let mut scratch = Array2::zeros((config.concat_channels(), cols));
    let mut act = Array2::zeros((config.concat_channels(), cols));
    let mut xhats: Vec<Array2<f64>> = Vec::with_capacity(l);
    let mut vars: Vec<Array1<f64>> = Vec::with_capacity(l);

    // Layer 1 convolves the raw input directly.
    {
        let (input_part, mut rest) = buf.view_mut().split_at(Axis(0), c);
        let mut out = rest.slice_mut(s![..g, ..]);
        conv_forward(&mut out, &input_part.view(), &params.convs[0], config.dilations[0], m, t, &mut scratch);
    }

    for li in 1..l {
        let width = config.conv_in_channels(li);
        let j = li - 1;
        // BN (batch stats) + ReLU over the concatenation so far.
        let (mean, var) = bn_batch_stats(&buf.slice(s![..width, ..]));
        let bn = &mut params.bns[j];
        let mom = config.bn_momentum;
        for ch in 0..width {
            bn.running_mean[ch] = (1.0 - mom) * bn.running_mean[ch] + mom * mean[ch];
            bn.running_var[ch] = (1.0 - mom) * bn.running_var[ch] + mom * var[ch];
        }
        let mut xhat = Array2::zeros((width, cols));
        for ch in 0..width {
            let inv = 1.0 / (var[ch] + config.bn_epsilon).sqrt();
            let mu = mean[ch];
            let sc = bn.scale[ch];
            let sh = bn.shift[ch];
            let src = &buf.as_slice().unwrap()[ch * cols..(ch + 1) * cols];
            let xh = &mut xhat.as_slice_mut().unwrap()[ch * cols..(ch + 1) * cols];
            let a = &mut act.as_slice_mut().unwrap()[ch * cols..(ch + 1) * cols];
            for i in 0..cols {
                let v = (src[i] - mu) * inv;
                xh[i] = v;
                a[i] = (sc * v + sh).max(0.0);
            }
        }
        xhats.push(xhat);
        vars.push(var);
        let act_view = act.slice(s![..width, ..]);
        let (_, mut rest) = buf.view_mut().split_at(Axis(0), c + g * li);
        let mut out = rest.slice_mut(s![..g, ..]);
        conv_forward(&mut out, &act_view, &params.convs[li], config.dilations[li], m, t, &mut scratch);
    }

    // Final BN + ReLU over the full concatenation.
    let width = config.concat_channels();
    let (mean, var) = bn_batch_stats(&buf.view());
    {
        let bn = &mut params.bns[l - 1];
        let mom = config.bn_momentum;
        for ch in 0..width {
            bn.running_mean[ch] = (1.0 - mom) * bn.running_mean[ch] + mom * mean[ch];
            bn.running_var[ch] = (1.0 - mom) * bn.running_var[ch] + mom * var[ch];
        }
    }
    let bn = &params.bns[l - 1];
    let mut xhat = Array2::zeros((width, cols));
    for ch in 0..width {
        let inv = 1.0 / (var[ch] + config.bn_epsilon).sqrt();
        let mu = mean[ch];
        let sc = bn.scale[ch];
        let sh = bn.shift[ch];
        let src = &buf.as_slice().unwrap()[ch * cols..(ch + 1) * cols];
        let xh = &mut xhat.as_slice_mut().unwrap()[ch * cols..(ch + 1) * cols];
        let a = &mut act.as_slice_mut().unwrap()[ch * cols..(ch + 1) * cols];
        for i in 0..cols {
            let v = (src[i] - mu) * inv;
            xh[i] = v;
            a[i] = (sc * v + sh).max(0.0);
        }
    }
    xhats.push(xhat);
    vars.push(var);

    // Global average pooling and the fully connected head.
    let mut pooled = Array2::zeros((m, width));
    for w in 0..m {
        for ch in 0..width {
            let row = &act.as_slice().unwrap()[ch * cols + w * t..ch * cols + (w + 1) * t];
            pooled[[w, ch]] = sum_unrolled(row) / t as f64;
        }
    }
    let mut emb = Array2::zeros((m, config.embedding_dim));
    general_mat_mul(1.0, &pooled, &params.fc_weight.t(), 0.0, &mut emb);
    for mut row in emb.rows_mut() {
        row += &params.fc_bias;
    }
    Ok((
        emb,
        BatchCache {
            buf,
            xhats,
            vars,
            pooled,
            m,
        },
    ))
}

/// Eval-mode forward over a batch: batch norm uses running statistics and
/// nothing is mutated, so this is a pure function of its inputs.
pub fn forward_eval_batch(
    params: &NetworkParams,
    config: &NetworkConfig,
    windows: &[ArrayView2<f64>],
) -> Result<Array2<f64>> {
    params.validate(config)?;
    let m = windows.len();
    let t = config.time_steps;
    let cols = m * t;
    let c = config.input_channels;
    let g = config.growth;
    let l = config.num_conv_layers;
    let mut buf = stack_windows(config, windows)?;
    let mut scratch = Array2::zeros((config.concat_channels(), cols));
    let mut act = Array2::zeros((config.concat_channels(), cols));

    {
        let (input_part, mut rest) = buf.view_mut().split_at(Axis(0), c);
        let mut out = rest.slice_mut(s![..g, ..]);
        conv_forward(&mut out, &input_part.view(), &params.convs[0], config.dilations[0], m, t, &mut scratch);
    }
    let apply_bn_relu = |buf: &Array2<f64>, act: &mut Array2<f64>, j: usize, width: usize| {
        let bn = &params.bns[j];
        for ch in 0..width {
            let inv = 1.0 / (bn.running_var[ch] + config.bn_epsilon).sqrt();
            let mu = bn.running_mean[ch];
            let sc = bn.scale[ch];
            let sh = bn.shift[ch];
            let src = &buf.as_slice().unwrap()[ch * cols..(ch + 1) * cols];
            let a = &mut act.as_slice_mut().unwrap()[ch * cols..(ch + 1) * cols];
            for i in 0..cols {
                a[i] = (sc * (src[i] - mu) * inv + sh).max(0.0);
            }
        }
    };
    for li in 1..l {
        let width = config.conv_in_channels(li);
        apply_bn_relu(&buf, &mut act, li - 1, width);
        let act_view = act.slice(s![..width, ..]);
        let (_, mut rest) = buf.view_mut().split_at(Axis(0), c + g * li);
        let mut out = rest.slice_mut(s![..g, ..]);
        conv_forward(&mut out, &act_view, &params.convs[li], config.dilations[li], m, t, &mut scratch);
    }
    let width = config.concat_channels();
    apply_bn_relu(&buf, &mut act, l - 1, width);

    let mut pooled = Array2::zeros((m, width));
    for w in 0..m {
        for ch in 0..width {
            let row = &act.as_slice().unwrap()[ch * cols + w * t..ch * cols + (w + 1) * t];
            pooled[[w, ch]] = sum_unrolled(row) / t as f64;
        }
    }
    let mut emb = Array2::zeros((m, config.embedding_dim));
    general_mat_mul(1.0, &pooled, &params.fc_weight.t(), 0.0, &mut emb);
    for mut row in emb.rows_mut() {
        row += &params.fc_bias;
    }
    Ok(emb)
}

/// Eval-mode forward of a single window.
pub fn forward_eval(
    params: &NetworkParams,
    config: &NetworkConfig,
    window: &ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let emb = forward_eval_batch(params, config, &[window.view()])?;
    Ok(emb.row(0).to_owned())
}

/// Exact gradient of BN with batch statistics, given xhat and batch var:
/// dx = inv/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)).
fn bn_backward_rows(
    d_out: &ArrayView2<f64>,
    xhat: &Array2<f64>,
    var: &Array1<f64>,
    scale: &Array1<f64>,
    eps: f64,
    d_in: &mut ndarray::ArrayViewMut2<f64>,
    d_scale: &mut Array1<f64>,
    d_shift: &mut Array1<f64>,
) {
    let cols = d_out.ncols();
    let n = cols as f64;
    let d_out_s = d_out.to_slice().expect("d_out contiguous");
    let xhat_s = xhat.as_slice().unwrap();
    let d_in_s = d_in.as_slice_mut().expect("d_in contiguous");
    for ch in 0..d_out.nrows() {
        let dy = &d_out_s[ch * cols..(ch + 1) * cols];
        let xh = &xhat_s[ch * cols..(ch + 1) * cols];
        let inv = 1.0 / (var[ch] + eps).sqrt();
        let sc = scale[ch];
        let mut s0 = [0.0f64; 2];
        let mut s1 = [0.0f64; 2];
        let chunks = dy.chunks_exact(2).zip(xh.chunks_exact(2));
        for (d, x) in chunks {
            s0[0] += d[0];
            s0[1] += d[1];
            s1[0] += d[0] * x[0];
            s1[1] += d[1] * x[1];
        }
        let mut sum_dy = s0[0] + s0[1];
        let mut sum_dy_xh = s1[0] + s1[1];
        if cols % 2 == 1 {
            sum_dy += dy[cols - 1];
            sum_dy_xh += dy[cols - 1] * xh[cols - 1];
        }
        d_scale[ch] += sum_dy_xh;
        d_shift[ch] += sum_dy;
        let din = &mut d_in_s[ch * cols..(ch + 1) * cols];
        let a = sc * inv;
        let k1 = sum_dy / n;
        let k2 = sum_dy_xh / n;
        for i in 0..cols {
            // dxhat = dy * scale
            din[i] += a * (dy[i] - k1 - xh[i] * k2);
        }
    }
}

/// Reverse-mode gradients for a train-mode forward pass. Returns the
/// parameter gradients (summed over the batch) and per-window gradients
/// with respect to the raw input.
pub fn backward_batch(
    params: &NetworkParams,
    config: &NetworkConfig,
    cache: &BatchCache,
    grad_emb: &Array2<f64>,
) -> Result<(ParamGrads, Vec<Array2<f64>>)> {
    let m = cache.m;
    let t = config.time_steps;
    let cols = m * t;
    let c = config.input_channels;
    let g = config.growth;
    let l = config.num_conv_layers;
    if grad_emb.dim() != (m, config.embedding_dim) {
        return Err(Error::Data(format!(
            "grad_emb shape {:?} does not match cache batch {m} x {}",
            grad_emb.dim(),
            config.embedding_dim
        )));
    }
    if cache.buf.ncols() != cols || cache.xhats.len() != l {
        return Err(Error::Data("cache does not match config".into()));
    }
    let mut grads = ParamGrads::zeros_like(params);

    // FC head.
    let width = config.concat_channels();
    general_mat_mul(1.0, &grad_emb.t(), &cache.pooled, 0.0, &mut grads.fc_weight);
    for col in 0..config.embedding_dim {
        grads.fc_bias[col] = grad_emb.column(col).sum();
    }
    let mut d_pooled = Array2::zeros((m, width));
    general_mat_mul(1.0, grad_emb, &params.fc_weight, 0.0, &mut d_pooled);

    // GAP backward: spread /T over each window's columns.
    let mut d_act = Array2::zeros((width, cols));
    {
        let d_act_s = d_act.as_slice_mut().unwrap();
        for w in 0..m {
            for ch in 0..width {
                let v = d_pooled[[w, ch]] / t as f64;
                d_act_s[ch * cols + w * t..ch * cols + (w + 1) * t].fill(v);
            }
        }
    }

    // Final BN+ReLU backward into the concat-buffer gradient.
    let mut d_buf = Array2::zeros((width, cols));
    {
        let bn = &params.bns[l - 1];
        let xhat = &cache.xhats[l - 1];
        // ReLU mask from the recomputed pre-activation sign.
        let xhat_s = xhat.as_slice().unwrap();
        let d_act_s = d_act.as_slice_mut().unwrap();
        for ch in 0..width {
            let sc = bn.scale[ch];
            let sh = bn.shift[ch];
            let xh = &xhat_s[ch * cols..(ch + 1) * cols];
            let da = &mut d_act_s[ch * cols..(ch + 1) * cols];
            for i in 0..cols {
                if sc * xh[i] + sh <= 0.0 {
                    da[i] = 0.0;
                }
            }
        }
        let (d_scale, d_shift) = &mut grads.bns[l - 1];
        let mut d_in = d_buf.view_mut();
        bn_backward_rows(
            &d_act.view(),
            xhat,
            &cache.vars[l - 1],
            &bn.scale,
            config.bn_epsilon,
            &mut d_in,
            d_scale,
            d_shift,
        );
    }

    let max_in = config.conv_in_channels(l - 1).max(c);
    let mut scratch = Array2::zeros((max_in, cols));
    let mut gemm_tmp = Array2::zeros((max_in, cols));
    let mut a_in_buf = Array2::zeros((max_in, cols));
    let mut d_a_buf = Array2::zeros((max_in, cols));
    let mut d_f_buf = Array2::zeros((g, cols));

    // Walk conv layers backwards. When layer li is processed, the gradient
    // rows for its output F_li are complete: its only consumers are the
    // final BN and the BNs of later layers, which have all been handled.
    for li in (1..l).rev() {
        let in_width = config.conv_in_channels(li);
        let j = li - 1;
        let conv = &params.convs[li];
        let dil = config.dilations[li];
        let k = conv.weight.dim().2;
        let center = (k - 1) / 2;
        d_f_buf.assign(&d_buf.slice(s![c + g * li..c + g * (li + 1), ..]));
        let d_f = d_f_buf.view();

        // Recompute the conv input (post-ReLU activations) from xhat.
        let bn = &params.bns[j];
        let xhat = &cache.xhats[j];
        {
            let xhat_s = xhat.as_slice().unwrap();
            let a_s = a_in_buf.as_slice_mut().unwrap();
            for ch in 0..in_width {
                let sc = bn.scale[ch];
                let sh = bn.shift[ch];
                let xh = &xhat_s[ch * cols..(ch + 1) * cols];
                let a = &mut a_s[ch * cols..(ch + 1) * cols];
                for i in 0..cols {
                    a[i] = (sc * xh[i] + sh).max(0.0);
                }
            }
        }

        // Conv backward: weight, bias, and input gradients.
        let (dw, db) = &mut grads.convs[li];
        for o in 0..g {
            db[o] += sum_unrolled(d_f.row(o).to_slice().unwrap());
        }
        d_a_buf.slice_mut(s![..in_width, ..]).fill(0.0);
        for ki in 0..k {
            let off = (ki as i64 - center as i64) * dil as i64;
            // dW_k = dY . shift(A)^T
            {
                let a_in = a_in_buf.slice(s![..in_width, ..]);
                let mut sc_rows = scratch.slice_mut(s![..in_width, ..]);
                shifted_copy_view(&mut sc_rows, &a_in, off, m, t);
                let sc_view = scratch.slice(s![..in_width, ..]);
                let mut dw_k = dw.slice_mut(s![.., .., ki]);
                general_mat_mul(1.0, &d_f, &sc_view.t(), 1.0, &mut dw_k);
            }
            // dA[:, t+off] += W_k^T . dY[:, t]
            {
                let w_k = conv.weight.slice(s![.., .., ki]);
                let mut tmp = gemm_tmp.slice_mut(s![..in_width, ..]);
                general_mat_mul(1.0, &w_k.t(), &d_f, 0.0, &mut tmp);
                let tmp_view = gemm_tmp.slice(s![..in_width, ..]);
                let mut d_a_view = d_a_buf.slice_mut(s![..in_width, ..]);
                shifted_accumulate(&mut d_a_view, &tmp_view, off, m, t);
            }
        }

        // ReLU backward on the recomputed pre-activation sign.
        {
            let xhat_s = xhat.as_slice().unwrap();
            let da_s = d_a_buf.as_slice_mut().unwrap();
            for ch in 0..in_width {
                let sc = bn.scale[ch];
                let sh = bn.shift[ch];
                let xh = &xhat_s[ch * cols..(ch + 1) * cols];
                let da = &mut da_s[ch * cols..(ch + 1) * cols];
                for i in 0..cols {
                    if sc * xh[i] + sh <= 0.0 {
                        da[i] = 0.0;
                    }
                }
            }
        }

        // BN backward, accumulating into the prefix of d_buf.
        let (d_scale, d_shift) = &mut grads.bns[j];
        let d_a = d_a_buf.slice(s![..in_width, ..]);
        let mut d_in = d_buf.slice_mut(s![..in_width, ..]);
        bn_backward_rows(
            &d_a,
            xhat,
            &cache.vars[j],
            &bn.scale,
            config.bn_epsilon,
            &mut d_in,
            d_scale,
            d_shift,
        );
    }

    // Layer 1: convolves the raw input.
    {
        let conv = &params.convs[0];
        let dil = config.dilations[0];
        let k = conv.weight.dim().2;
        let center = (k - 1) / 2;
        d_f_buf.assign(&d_buf.slice(s![c..c + g, ..]));
        let d_f = d_f_buf.view();
        let (dw, db) = &mut grads.convs[0];
        for o in 0..g {
            db[o] += sum_unrolled(d_f.row(o).to_slice().unwrap());
        }
        for ki in 0..k {
            let off = (ki as i64 - center as i64) * dil as i64;
            {
                let raw = cache.buf.slice(s![..c, ..]);
                let mut sc_rows = scratch.slice_mut(s![..c, ..]);
                shifted_copy_view(&mut sc_rows, &raw, off, m, t);
                let sc_view = scratch.slice(s![..c, ..]);
                let mut dw_k = dw.slice_mut(s![.., .., ki]);
                general_mat_mul(1.0, &d_f, &sc_view.t(), 1.0, &mut dw_k);
            }
            {
                let w_k = conv.weight.slice(s![.., .., ki]);
                let mut tmp = gemm_tmp.slice_mut(s![..c, ..]);
                general_mat_mul(1.0, &w_k.t(), &d_f, 0.0, &mut tmp);
                let tmp_view = gemm_tmp.slice(s![..c, ..]);
                let mut d_raw = d_buf.slice_mut(s![..c, ..]);
                shifted_accumulate(&mut d_raw, &tmp_view, off, m, t);
            }
        }
    }

    // Per-window input gradients.
    let mut d_inputs = Vec::with_capacity(m);
    for w in 0..m {
        d_inputs.push(d_buf.slice(s![..c, w * t..(w + 1) * t]).to_owned());
    }
    Ok((grads, d_inputs))
}

// ---------------------------------------------------------------------------
// Embeddings and the model artifact.
// ---------------------------------------------------------------------------

/// Where an embedding came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    Window { recording_id: String, window_index: usize },
    Centroid { n_windows: usize },
}

/// One embedding vector with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub user_id: UserId,
    pub vector: Array1<f64>,
    pub source: EmbeddingSource,
}

/// Elementwise arithmetic mean of embeddings (not re-normalized).
pub fn centroid_embedding(embeddings: &[Embedding]) -> Result<Embedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Data("cannot average an empty embedding list".into()))?;
    let dim = first.vector.len();
    let mut acc = Array1::<f64>::zeros(dim);
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(Error::Data(format!(
                "embedding dim {} != {}",
                e.vector.len(),
                dim
            )));
        }
        acc += &e.vector;
    }
    acc /= embeddings.len() as f64;
    Ok(Embedding {
        user_id: first.user_id.clone(),
        vector: acc,
        source: EmbeddingSource::Centroid {
            n_windows: embeddings.len(),
        },
    })
}

/// Mean of raw vectors (helper used by evaluation pipelines).
pub fn centroid_vector(vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Data("cannot average an empty vector list".into()))?;
    let mut acc = Array1::<f64>::zeros(first.len());
    for v in vectors {
        if v.len() != first.len() {
            return Err(Error::Data("embedding dim mismatch".into()));
        }
        acc += v;
    }
    acc /= vectors.len() as f64;
    Ok(acc)
}

/// Self-describing model container: architecture, weights (one entry per
/// ensemble fold), preprocessing parameters, and normalization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub config: NetworkConfig,
    pub channel_spec: ChannelSpec,
    pub savgol: SavgolConfig,
    pub norm_stats: NormalizationStats,
    /// One parameter set per ensemble fold; evaluation concatenates the
    /// per-fold embeddings in fold order.
    pub models: Vec<NetworkParams>,
    pub epochs_completed: u32,
    pub train_seed: u64,
}

pub const MODEL_FORMAT_TAG: &str = "gaze-embedder/v1";

impl ModelArtifact {
    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT_TAG {
            return Err(Error::Data(format!("unknown model format tag '{}'", self.format)));
        }
        if self.models.is_empty() {
            return Err(Error::Data("model artifact holds no parameter sets".into()));
        }
        for params in &self.models {
            params.validate(&self.config)?;
        }
        if self.norm_stats.channel_count() != self.channel_spec.channel_count() {
            return Err(Error::Data("normalization stats do not match channel spec".into()));
        }
        Ok(())
    }

    /// Embedding dimension at evaluation time (folds concatenated).
    pub fn eval_embedding_dim(&self) -> usize {
        self.config.embedding_dim * self.models.len()
    }

    /// Embed one preprocessed window, concatenating fold embeddings.
    pub fn embed_window(&self, window: &ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(self.eval_embedding_dim());
        let d = self.config.embedding_dim;
        for (f, params) in self.models.iter().enumerate() {
            let e = forward_eval(params, &self.config, window)?;
            out.slice_mut(s![f * d..(f + 1) * d]).assign(&e);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Data(format!("model serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let artifact: ModelArtifact = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("model parse {}: {e}", path.display())))?;
        artifact.validate()?;
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_channels: 2,
            time_steps: 12,
            num_conv_layers: 3,
            growth: 2,
            kernel_size: 3,
            dilations: vec![1, 2, 1],
            embedding_dim: 4,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    fn random_window(config: &NetworkConfig, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((config.input_channels, config.time_steps), |_| {
            rng.gen_range(-1.5..1.5)
        })
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_config();
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        let c = init_params(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fc_input_dimension_matches_dense_concatenation() {
        let cfg = NetworkConfig::with_input_channels(8);
        assert_eq!(cfg.concat_channels(), 8 + 8 * 32);
        let params = init_params(&cfg, 1).unwrap();
        assert_eq!(params.fc_weight.dim(), (128, 264));
        for li in 0..8 {
            assert_eq!(params.convs[li].weight.dim().1, 8 + 32 * li);
        }
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 3).unwrap();
        params.fc_weight.fill(0.0);
        params.fc_bias.fill(0.0);
        let win = random_window(&cfg, 5);
        let emb = forward_eval(&params, &cfg, &win.view()).unwrap();
        assert!(emb.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 3).unwrap();
        let win = random_window(&cfg, 5);
        let a = forward_eval(&params, &cfg, &win.view()).unwrap();
        let b = forward_eval(&params, &cfg, &win.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_forward_does_not_mutate_params() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 3).unwrap();
        let before = params.clone();
        let win = random_window(&cfg, 5);
        let _ = forward_eval(&params, &cfg, &win.view()).unwrap();
        assert_eq!(params, before);
    }

    /// Independent oracle: direct per-sample convolution loops, explicit
    /// BN with running stats, ReLU, pooling, FC.
    fn naive_forward_eval(params: &NetworkParams, cfg: &NetworkConfig, win: &Array2<f64>) -> Vec<f64> {
        let t = cfg.time_steps;
        let conv = |input: &Vec<Vec<f64>>, cp: &ConvParams, dil: usize| -> Vec<Vec<f64>> {
            let k = cp.weight.dim().2;
            let center = (k as i64 - 1) / 2;
            let mut out = vec![vec![0.0; t]; cp.weight.dim().0];
            for o in 0..cp.weight.dim().0 {
                for ti in 0..t {
                    let mut acc = cp.bias[o];
                    for c in 0..input.len() {
                        for ki in 0..k {
                            let src = ti as i64 + (ki as i64 - center) * dil as i64;
                            if src >= 0 && (src as usize) < t {
                                acc += cp.weight[[o, c, ki]] * input[c][src as usize];
                            }
                        }
                    }
                    out[o][ti] = acc;
                }
            }
            out
        };
        let bn_relu = |input: &Vec<Vec<f64>>, bn: &BnParams| -> Vec<Vec<f64>> {
            input
                .iter()
                .enumerate()
                .map(|(ch, row)| {
                    let inv = 1.0 / (bn.running_var[ch] + cfg.bn_epsilon).sqrt();
                    row.iter()
                        .map(|v| (bn.scale[ch] * (v - bn.running_mean[ch]) * inv + bn.shift[ch]).max(0.0))
                        .collect()
                })
                .collect()
        };
        let mut blocks: Vec<Vec<f64>> = (0..cfg.input_channels).map(|c| win.row(c).to_vec()).collect();
        let f1 = conv(&blocks, &params.convs[0], cfg.dilations[0]);
        blocks.extend(f1);
        for li in 1..cfg.num_conv_layers {
            let a = bn_relu(&blocks, &params.bns[li - 1]);
            let f = conv(&a, &params.convs[li], cfg.dilations[li]);
            blocks.extend(f);
        }
        let a = bn_relu(&blocks, &params.bns[cfg.num_conv_layers - 1]);
        let pooled: Vec<f64> = a.iter().map(|row| row.iter().sum::<f64>() / t as f64).collect();
        (0..cfg.embedding_dim)
            .map(|d| {
                params.fc_bias[d]
                    + pooled
                        .iter()
                        .enumerate()
                        .map(|(c, p)| params.fc_weight[[d, c]] * p)
                        .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn forward_matches_naive_convolution_oracle() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 11).unwrap();
        // Perturb BN so the oracle exercises non-identity normalization.
        for bn in &mut params.bns {
            for (i, v) in bn.running_mean.iter_mut().enumerate() {
                *v = 0.05 * i as f64 - 0.1;
            }
            for (i, v) in bn.running_var.iter_mut().enumerate() {
                *v = 1.0 + 0.1 * i as f64;
            }
            for (i, v) in bn.scale.iter_mut().enumerate() {
                *v = 1.0 + 0.03 * i as f64;
            }
            for (i, v) in bn.shift.iter_mut().enumerate() {
                *v = 0.02 * i as f64 - 0.05;
            }
        }
        let win = random_window(&cfg, 17);
        let got = forward_eval(&params, &cfg, &win.view()).unwrap();
        let want = naive_forward_eval(&params, &cfg, &win);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "engine {g} vs oracle {w}");
        }
    }

    #[test]
    fn conv_outputs_preserve_window_length() {
        // Structural: batched eval with a larger dilated config runs and
        // produces the right shapes (padding preserves T for every dilation).
        let mut cfg = tiny_config();
        cfg.time_steps = 40;
        cfg.num_conv_layers = 4;
        cfg.dilations = vec![1, 4, 16, 64];
        let params = init_params(&cfg, 2).unwrap();
        let w1 = random_window(&cfg, 1);
        let w2 = random_window(&cfg, 2);
        let emb = forward_eval_batch(&params, &cfg, &[w1.view(), w2.view()]).unwrap();
        assert_eq!(emb.dim(), (2, cfg.embedding_dim));
    }

    fn loss_sum_embeddings(params: &mut NetworkParams, cfg: &NetworkConfig, wins: &[ArrayView2<f64>]) -> f64 {
        let (emb, _) = forward_train_batch(params, cfg, wins).unwrap();
        emb.sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 23).unwrap();
        let w1 = random_window(&cfg, 31);
        let w2 = random_window(&cfg, 32);
        let wins = [w1.view(), w2.view()];

        let mut p_train = params.clone();
        let (emb, cache) = forward_train_batch(&mut p_train, &cfg, &wins).unwrap();
        let grad_emb = Array2::ones(emb.dim());
        let (grads, _) = backward_batch(&params, &cfg, &cache, &grad_emb).unwrap();

        let analytic = grad_slices(&grads);
        let step = 1e-5;
        let mut max_rel: f64 = 0.0;
        let n_groups = analytic.len();
        for group in 0..n_groups {
            let len = analytic[group].len();
            for idx in 0..len {
                let mut plus = params.clone();
                visit_trainable(&mut plus, |g, s| {
                    if g == group {
                        s[idx] += step;
                    }
                });
                let mut minus = params.clone();
                visit_trainable(&mut minus, |g, s| {
                    if g == group {
                        s[idx] -= step;
                    }
                });
                let f_plus = loss_sum_embeddings(&mut plus, &cfg, &wins);
                let f_minus = loss_sum_embeddings(&mut minus, &cfg, &wins);
                let fd = (f_plus - f_minus) / (2.0 * step);
                let an = analytic[group][idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-4, "max relative grad error {max_rel}");
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_gradients() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 23).unwrap();
        let w1 = random_window(&cfg, 31);
        let wins = [w1.view()];
        let (emb, cache) = forward_train_batch(&mut params, &cfg, &wins).unwrap();
        let grad_emb = Array2::zeros(emb.dim());
        let (grads, d_in) = backward_batch(&params, &cfg, &cache, &grad_emb).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(d_in[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_doubles_parameter_gradients() {
        // Duplicating the batch leaves BN batch statistics unchanged, so
        // the gradient of the summed embedding doubles exactly.
        let cfg = tiny_config();
        let params = init_params(&cfg, 29).unwrap();
        let w = random_window(&cfg, 37);

        let mut p1 = params.clone();
        let (e1, cache1) = forward_train_batch(&mut p1, &cfg, &[w.view()]).unwrap();
        let (g1, _) = backward_batch(&params, &cfg, &cache1, &Array2::ones(e1.dim())).unwrap();

        let mut p2 = params.clone();
        let (e2, cache2) = forward_train_batch(&mut p2, &cfg, &[w.view(), w.view()]).unwrap();
        let (g2, _) = backward_batch(&params, &cfg, &cache2, &Array2::ones(e2.dim())).unwrap();

        for (a, b) in grad_slices(&g1).iter().zip(grad_slices(&g2).iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() < 1e-9, "2*{x} != {y}");
            }
        }
    }

    #[test]
    fn centroid_examples() {
        let mk = |vals: &[f64]| Embedding {
            user_id: UserId::new("u"),
            vector: Array1::from_vec(vals.to_vec()),
            source: EmbeddingSource::Window {
                recording_id: "r".into(),
                window_index: 0,
            },
        };
        // Single embedding -> itself.
        let c = centroid_embedding(&[mk(&[1.0, 2.0])]).unwrap();
        assert_eq!(c.vector.to_vec(), vec![1.0, 2.0]);
        // e and -e -> zero.
        let c = centroid_embedding(&[mk(&[1.0, -3.0]), mk(&[-1.0, 3.0])]).unwrap();
        assert!(c.vector.iter().all(|v| v.abs() < 1e-15));
        // Four random embeddings match the elementwise mean.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vs: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let c = centroid_embedding(&vs.iter().map(|v| mk(v)).collect::<Vec<_>>()).unwrap();
        for d in 0..6 {
            let mean = vs.iter().map(|v| v[d]).sum::<f64>() / 4.0;
            assert!((c.vector[d] - mean).abs() < 1e-12);
        }
        // Empty list errors.
        assert!(centroid_embedding(&[]).is_err());
    }

    #[test]
    fn artifact_round_trip() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 3).unwrap();
        let artifact = ModelArtifact {
            format: MODEL_FORMAT_TAG.to_string(),
            config: cfg.clone(),
            channel_spec: ChannelSpec::new(vec![crate::signal::Eye::Left], vec![crate::signal::Axis::Optical]).unwrap(),
            savgol: SavgolConfig::default(),
            norm_stats: NormalizationStats {
                mean: vec![0.0, 0.1],
                sd: vec![1.0, 2.0],
            },
            models: vec![params],
            epochs_completed: 0,
            train_seed: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        artifact.save(&path).unwrap();
        let back = ModelArtifact::load(&path).unwrap();
        assert_eq!(back.models[0], artifact.models[0]);
        assert_eq!(back.eval_embedding_dim(), cfg.embedding_dim);
    }
}
