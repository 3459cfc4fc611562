//! Forward and backward passes for the fixed layer set.
//!
//! Every backward function takes the same inputs as its forward counterpart
//! plus the upstream gradient and returns exact analytic partials.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::FeatureMap;
use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding so that output length equals input length at stride 1.
    #[default]
    Same,
}

/// 1-D convolution, stride 1. `weight` is laid out `[kernel][in][out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_size,
            in_channels,
            out_channels,
            weight: vec![0.0; kernel_size * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, input: &FeatureMap) -> Result<()> {
        if self.kernel_size == 0 {
            return Err(shape_err!("conv kernel size must be positive"));
        }
        if self.weight.len() != self.kernel_size * self.in_channels * self.out_channels
            || self.bias.len() != self.out_channels
        {
            return Err(shape_err!(
                "conv weights do not match declared shape {}x{}x{}",
                self.kernel_size,
                self.in_channels,
                self.out_channels
            ));
        }
        if input.channels() != self.in_channels {
            return Err(shape_err!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads {
    pub input: FeatureMap,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv1d_forward(input: &FeatureMap, conv: &Conv1d, _padding: Padding) -> Result<FeatureMap> {
    conv.check(input)?;
    let (batch, len, cin) = input.shape();
    let cout = conv.out_channels;
    let k = conv.kernel_size;
    let left = k / 2;
    let mut out = FeatureMap::zeros(batch, len, cout);
    let x = input.values();
    let o = out.values_mut();
    for b in 0..batch {
        for i in 0..len {
            let row = &mut o[(b * len + i) * cout..(b * len + i + 1) * cout];
            row.copy_from_slice(&conv.bias);
            for j in 0..k {
                let Some(src) = (i + j).checked_sub(left).filter(|&s| s < len) else {
                    continue;
                };
                let xin = &x[(b * len + src) * cin..(b * len + src + 1) * cin];
                for (ci, &xv) in xin.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let w = &conv.weight[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                    for (r, &wv) in row.iter_mut().zip(w) {
                        *r += xv * wv;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv1d_backward(
    input: &FeatureMap,
    conv: &Conv1d,
    upstream: &FeatureMap,
) -> Result<Conv1dGrads> {
    conv.check(input)?;
    let (batch, len, cin) = input.shape();
    let cout = conv.out_channels;
    if upstream.shape() != (batch, len, cout) {
        return Err(shape_err!(
            "conv upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            (batch, len, cout)
        ));
    }
    let k = conv.kernel_size;
    let left = k / 2;
    let mut grad_in = FeatureMap::zeros(batch, len, cin);
    let mut grad_w = vec![0.0; conv.weight.len()];
    let mut grad_b = vec![0.0; cout];
    let x = input.values();
    let g = upstream.values();
    let gi = grad_in.values_mut();
    for b in 0..batch {
        for i in 0..len {
            let up = &g[(b * len + i) * cout..(b * len + i + 1) * cout];
            for (gb, &u) in grad_b.iter_mut().zip(up) {
                *gb += u;
            }
            for j in 0..k {
                let Some(src) = (i + j).checked_sub(left).filter(|&s| s < len) else {
                    continue;
                };
                for ci in 0..cin {
                    let base = (j * cin + ci) * cout;
                    let w = &conv.weight[base..base + cout];
                    let gw = &mut grad_w[base..base + cout];
                    let xv = x[(b * len + src) * cin + ci];
                    let mut acc = 0.0;
                    for ((&u, &wv), gwv) in up.iter().zip(w).zip(gw.iter_mut()) {
                        acc += u * wv;
                        *gwv += xv * u;
                    }
                    gi[(b * len + src) * cin + ci] += acc;
                }
            }
        }
    }
    Ok(Conv1dGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

/// Non-overlapping max pooling. Returns the pooled map and, for every output
/// element, the flat index into the input that produced it. Ties go to the
/// first index in the window; a trailing remainder shorter than the pool is
/// dropped.
pub fn maxpool1d(input: &FeatureMap, pool_size: usize) -> Result<(FeatureMap, Vec<usize>)> {
    if pool_size == 0 {
        return Err(shape_err!("pool size must be positive"));
    }
    let (batch, len, ch) = input.shape();
    if len < pool_size {
        return Err(shape_err!(
            "input length {len} shorter than pool size {pool_size}"
        ));
    }
    let out_len = len / pool_size;
    let mut out = FeatureMap::zeros(batch, out_len, ch);
    let mut argmax = vec![0usize; batch * out_len * ch];
    let x = input.values();
    let o = out.values_mut();
    for b in 0..batch {
        for w in 0..out_len {
            for c in 0..ch {
                let mut best_idx = (b * len + w * pool_size) * ch + c;
                let mut best = x[best_idx];
                for p in 1..pool_size {
                    let idx = (b * len + w * pool_size + p) * ch + c;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                let oi = (b * out_len + w) * ch + c;
                o[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool1d_backward(
    input: &FeatureMap,
    argmax: &[usize],
    upstream: &FeatureMap,
) -> Result<FeatureMap> {
    if argmax.len() != upstream.values().len() {
        return Err(shape_err!(
            "pool gradient has {} values for {} routing indices",
            upstream.values().len(),
            argmax.len()
        ));
    }
    let (batch, len, ch) = input.shape();
    let mut grad = FeatureMap::zeros(batch, len, ch);
    let g = grad.values_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.values()) {
        g[idx] += u;
    }
    Ok(grad)
}

pub fn relu(input: &FeatureMap) -> FeatureMap {
    let mut out = input.clone();
    for v in out.values_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes the upstream gradient where the forward input was strictly
/// positive; the subgradient at zero is zero.
pub fn relu_backward(input: &FeatureMap, upstream: &FeatureMap) -> Result<FeatureMap> {
    if !input.same_shape(upstream) {
        return Err(shape_err!("relu gradient shape mismatch"));
    }
    let mut grad = upstream.clone();
    for (g, &x) in grad.values_mut().iter_mut().zip(input.values()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-element multipliers drawn by a training-mode dropout pass: either 0 or
/// `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

pub fn check_drop_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(config_err!("drop rate {rate} outside [0, 1)"));
    }
    Ok(())
}

/// Inverted dropout. Eval mode (and rate 0) is the identity and returns no mask.
pub fn dropout<R: Rng + ?Sized>(
    input: &FeatureMap,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(FeatureMap, Option<DropoutMask>)> {
    check_drop_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.values().len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let mut out = input.clone();
    for (v, &m) in out.values_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(DropoutMask(mask))))
}

pub fn dropout_backward(mask: Option<&DropoutMask>, upstream: &FeatureMap) -> Result<FeatureMap> {
    let mut grad = upstream.clone();
    if let Some(DropoutMask(mask)) = mask {
        if mask.len() != grad.values().len() {
            return Err(shape_err!("dropout mask does not match gradient"));
        }
        for (g, &m) in grad.values_mut().iter_mut().zip(mask) {
            *g *= m;
        }
    }
    Ok(grad)
}

/// Fully connected layer. `weight` is `[in][out]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, input: &FeatureMap) -> Result<()> {
        if self.weight.len() != self.in_features * self.out_features
            || self.bias.len() != self.out_features
        {
            return Err(shape_err!(
                "dense weights do not match declared shape {}x{}",
                self.in_features,
                self.out_features
            ));
        }
        if input.sample_width() != self.in_features {
            return Err(shape_err!(
                "dense expects width {}, got {}",
                self.in_features,
                input.sample_width()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: FeatureMap,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `out = in . W + b` on the flattened input; output is `batch x 1 x out`.
pub fn dense_forward(input: &FeatureMap, dense: &Dense) -> Result<FeatureMap> {
    dense.check(input)?;
    let nout = dense.out_features;
    let mut out = FeatureMap::zeros(input.batch(), 1, nout);
    let o = out.values_mut();
    for b in 0..input.batch() {
        let row = &mut o[b * nout..(b + 1) * nout];
        row.copy_from_slice(&dense.bias);
        for (i, &x) in input.sample(b).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w = &dense.weight[i * nout..(i + 1) * nout];
            for (r, &wv) in row.iter_mut().zip(w) {
                *r += x * wv;
            }
        }
    }
    Ok(out)
}

/// The returned input gradient has the input's original (unflattened) shape.
pub fn dense_backward(input: &FeatureMap, dense: &Dense, upstream: &FeatureMap) -> Result<DenseGrads> {
    dense.check(input)?;
    let nout = dense.out_features;
    if upstream.batch() != input.batch() || upstream.sample_width() != nout {
        return Err(shape_err!("dense upstream gradient shape mismatch"));
    }
    let (batch, len, ch) = input.shape();
    let mut grad_in = FeatureMap::zeros(batch, len, ch);
    let mut grad_w = vec![0.0; dense.weight.len()];
    let mut grad_b = vec![0.0; nout];
    let width = dense.in_features;
    for b in 0..batch {
        let up = upstream.sample(b);
        for (gb, &u) in grad_b.iter_mut().zip(up) {
            *gb += u;
        }
        let x = input.sample(b);
        let gi = &mut grad_in.values_mut()[b * width..(b + 1) * width];
        for i in 0..width {
            let w = &dense.weight[i * nout..(i + 1) * nout];
            let gw = &mut grad_w[i * nout..(i + 1) * nout];
            let mut acc = 0.0;
            for ((&u, &wv), gwv) in up.iter().zip(w).zip(gw.iter_mut()) {
                acc += u * wv;
                *gwv += x[i] * u;
            }
            gi[i] = acc;
        }
    }
    Ok(DenseGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

/// Elementwise sum of a block's shortcut and its output. The backward pass
/// is the identity on both branches, so there is no separate backward function.
pub fn residual_add(block_input: &FeatureMap, block_output: &FeatureMap) -> Result<FeatureMap> {
    if !block_input.same_shape(block_output) {
        return Err(shape_err!(
            "residual branches differ in shape: {:?} vs {:?}",
            block_input.shape(),
            block_output.shape()
        ));
    }
    let mut out = block_output.clone();
    for (o, &s) in out.values_mut().iter_mut().zip(block_input.values()) {
        *o += s;
    }
    Ok(out)
}
