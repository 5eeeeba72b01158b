//! Layer arithmetic for the pose regressor.
//!
//! Parameters are stored as one flat f32 vector (the checkpoint format) and
//! widened to f64 for all arithmetic; the functions here take the widened
//! view. Layout, in layer order: conv weights `[out_ch][in_ch/groups][ky][kx]`
//! then bias `[out_ch]`; fully-connected weights `[out][in]` then bias; finally
//! the three regression heads (centre, left, right), each `[3][feat]` weights
//! plus `[3]` bias.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};

fn default_groups() -> usize {
    1
}

fn default_lrn_size() -> usize {
    5
}

fn default_lrn_alpha() -> f64 {
    1e-4
}

fn default_lrn_beta() -> f64 {
    0.75
}

fn default_lrn_k() -> f64 {
    1.0
}

/// One backbone layer. Convolutions and fully-connected layers are followed
/// by a ReLU; the regression heads appended after the backbone are linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        #[serde(default = "default_groups")]
        groups: usize,
    },
    /// Max pooling with ceil-mode output sizing and edge-clamped windows.
    Pool { kernel: usize, stride: usize },
    /// Across-channel local response normalization.
    Lrn {
        #[serde(default = "default_lrn_size")]
        local_size: usize,
        #[serde(default = "default_lrn_alpha")]
        alpha: f64,
        #[serde(default = "default_lrn_beta")]
        beta: f64,
        #[serde(default = "default_lrn_k")]
        k: f64,
    },
    Fc { width: usize },
}

/// A layer with resolved shapes and parameter offsets.
#[derive(Debug, Clone)]
pub struct ResolvedLayer {
    pub spec: LayerSpec,
    pub in_channels: usize,
    pub in_size: usize,
    /// Input length when the layer consumes a flattened vector.
    pub in_features: usize,
    pub out_channels: usize,
    pub out_size: usize,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
}

impl ResolvedLayer {
    pub fn parameter_count(&self) -> usize {
        self.weight_len + self.bias_len
    }
}

/// Shape-checked network: backbone layers plus three 3-output heads.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<ResolvedLayer>,
    /// Flattened feature length feeding the heads.
    pub feature_len: usize,
    pub head_weight_offsets: [usize; 3],
    pub head_bias_offsets: [usize; 3],
    pub total_params: usize,
    pub input_size: usize,
}

impl Network {
    /// Resolves layer shapes for a square single-channel input.
    pub fn resolve(input_size: usize, specs: &[LayerSpec]) -> Result<Self> {
        if input_size == 0 {
            return Err(SvrError::InvalidArgument("input_size must be >= 1".into()));
        }
        let mut channels = 1usize;
        let mut size = input_size;
        let mut flattened: Option<usize> = None;
        let mut offset = 0usize;
        let mut layers = Vec::with_capacity(specs.len());

        for (idx, spec) in specs.iter().enumerate() {
            let (in_channels, in_size) = (channels, size);
            let in_features = flattened.unwrap_or(channels * size * size);
            let mut layer = ResolvedLayer {
                spec: *spec,
                in_channels,
                in_size,
                in_features,
                out_channels: channels,
                out_size: size,
                weight_offset: offset,
                weight_len: 0,
                bias_offset: offset,
                bias_len: 0,
            };
            match *spec {
                LayerSpec::Conv { out_channels, kernel, stride, pad, groups } => {
                    if flattened.is_some() {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: conv after fully-connected"
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 || groups == 0 {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: zero-sized conv parameter"
                        )));
                    }
                    if channels % groups != 0 || out_channels % groups != 0 {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: groups {groups} must divide {channels} and {out_channels}"
                        )));
                    }
                    let padded = size + 2 * pad;
                    if padded < kernel {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: kernel {kernel} exceeds padded input {padded}"
                        )));
                    }
                    let out = (padded - kernel) / stride + 1;
                    layer.weight_len = out_channels * (channels / groups) * kernel * kernel;
                    layer.bias_len = out_channels;
                    channels = out_channels;
                    size = out;
                }
                LayerSpec::Pool { kernel, stride } => {
                    if flattened.is_some() {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: pool after fully-connected"
                        )));
                    }
                    if kernel == 0 || stride == 0 || size < kernel {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: pool kernel {kernel}/stride {stride} invalid for size {size}"
                        )));
                    }
                    // Ceil-mode sizing; windows are clamped to the input.
                    size = (size - kernel).div_ceil(stride) + 1;
                }
                LayerSpec::Lrn { local_size, .. } => {
                    if flattened.is_some() {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: lrn after fully-connected"
                        )));
                    }
                    if local_size == 0 || local_size % 2 == 0 {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: lrn local_size must be odd and positive"
                        )));
                    }
                }
                LayerSpec::Fc { width } => {
                    if width == 0 {
                        return Err(SvrError::InvalidArgument(format!(
                            "layer {idx}: fc width 0"
                        )));
                    }
                    layer.weight_len = width * in_features;
                    layer.bias_len = width;
                    flattened = Some(width);
                    channels = width;
                    size = 1;
                }
            }
            if size == 0 {
                return Err(SvrError::InvalidArgument(format!(
                    "layer {idx}: computed spatial size 0"
                )));
            }
            layer.out_channels = channels;
            layer.out_size = size;
            layer.bias_offset = layer.weight_offset + layer.weight_len;
            offset = layer.bias_offset + layer.bias_len;
            layers.push(layer);
        }

        let feature_len = flattened.unwrap_or(channels * size * size);
        let mut head_weight_offsets = [0; 3];
        let mut head_bias_offsets = [0; 3];
        for h in 0..3 {
            head_weight_offsets[h] = offset;
            offset += 3 * feature_len;
            head_bias_offsets[h] = offset;
            offset += 3;
        }
        Ok(Self {
            layers,
            feature_len,
            head_weight_offsets,
            head_bias_offsets,
            total_params: offset,
            input_size,
        })
    }

    /// Per-layer trainable parameter counts, heads last.
    pub fn parameter_counts(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let name = match layer.spec {
                LayerSpec::Conv { out_channels, .. } => format!("conv{}-{}", i, out_channels),
                LayerSpec::Pool { .. } => format!("pool{i}"),
                LayerSpec::Lrn { .. } => format!("lrn{i}"),
                LayerSpec::Fc { width } => format!("fc{i}-{width}"),
            };
            out.push((name, layer.parameter_count()));
        }
        for h in 0..3 {
            out.push((format!("head{h}"), 3 * self.feature_len + 3));
        }
        out
    }
}

/// Intermediate activations retained for the backward pass.
#[derive(Default)]
pub struct Tape {
    /// Input to each layer (post-activation of the previous one).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of conv/fc layers (for the ReLU mask).
    pub pre_activations: Vec<Vec<f64>>,
    /// Argmax source index per pooled element.
    pub pool_argmax: Vec<Vec<usize>>,
    /// LRN normalizer `S` per element.
    pub lrn_scale: Vec<Vec<f64>>,
    /// Features feeding the heads.
    pub features: Vec<f64>,
}

fn conv_forward(
    layer: &ResolvedLayer,
    params: &[f64],
    input: &[f64],
    out: &mut Vec<f64>,
) {
    let LayerSpec::Conv { out_channels, kernel, stride, pad, groups } = layer.spec else {
        unreachable!()
    };
    let in_ch = layer.in_channels;
    let in_size = layer.in_size;
    let out_size = layer.out_size;
    let ch_per_group = in_ch / groups;
    let out_per_group = out_channels / groups;
    out.resize(out_channels * out_size * out_size, 0.0);

    for oc in 0..out_channels {
        let group = oc / out_per_group;
        let bias = params[layer.bias_offset + oc];
        let w_base = layer.weight_offset + oc * ch_per_group * kernel * kernel;
        for oy in 0..out_size {
            for ox in 0..out_size {
                let mut acc = bias;
                for icl in 0..ch_per_group {
                    let ic = group * ch_per_group + icl;
                    let w_ch = w_base + icl * kernel * kernel;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= in_size as isize {
                            continue;
                        }
                        let row = (ic * in_size + iy as usize) * in_size;
                        let w_row = w_ch + ky * kernel;
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= in_size as isize {
                                continue;
                            }
                            acc += params[w_row + kx] * input[row + ix as usize];
                        }
                    }
                }
                out[(oc * out_size + oy) * out_size + ox] = acc;
            }
        }
    }
}

fn conv_backward(
    layer: &ResolvedLayer,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_params: &mut [f64],
    grad_in: &mut Vec<f64>,
) {
    let LayerSpec::Conv { out_channels, kernel, stride, pad, groups } = layer.spec else {
        unreachable!()
    };
    let in_ch = layer.in_channels;
    let in_size = layer.in_size;
    let out_size = layer.out_size;
    let ch_per_group = in_ch / groups;
    let out_per_group = out_channels / groups;
    grad_in.clear();
    grad_in.resize(in_ch * in_size * in_size, 0.0);

    for oc in 0..out_channels {
        let group = oc / out_per_group;
        let w_base = layer.weight_offset + oc * ch_per_group * kernel * kernel;
        for oy in 0..out_size {
            for ox in 0..out_size {
                let g = grad_out[(oc * out_size + oy) * out_size + ox];
                if g == 0.0 {
                    continue;
                }
                grad_params[layer.bias_offset + oc] += g;
                for icl in 0..ch_per_group {
                    let ic = group * ch_per_group + icl;
                    let w_ch = w_base + icl * kernel * kernel;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= in_size as isize {
                            continue;
                        }
                        let row = (ic * in_size + iy as usize) * in_size;
                        let w_row = w_ch + ky * kernel;
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= in_size as isize {
                                continue;
                            }
                            let idx = row + ix as usize;
                            grad_params[w_row + kx] += g * input[idx];
                            grad_in[idx] += g * params[w_row + kx];
                        }
                    }
                }
            }
        }
    }
}

fn pool_forward(
    layer: &ResolvedLayer,
    input: &[f64],
    out: &mut Vec<f64>,
    argmax: &mut Vec<usize>,
) {
    let LayerSpec::Pool { kernel, stride } = layer.spec else { unreachable!() };
    let ch = layer.in_channels;
    let in_size = layer.in_size;
    let out_size = layer.out_size;
    out.resize(ch * out_size * out_size, 0.0);
    argmax.resize(ch * out_size * out_size, 0);
    for c in 0..ch {
        for oy in 0..out_size {
            let y0 = oy * stride;
            let y1 = (y0 + kernel).min(in_size);
            for ox in 0..out_size {
                let x0 = ox * stride;
                let x1 = (x0 + kernel).min(in_size);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for y in y0..y1 {
                    let row = (c * in_size + y) * in_size;
                    for x in x0..x1 {
                        let v = input[row + x];
                        if v > best {
                            best = v;
                            best_idx = row + x;
                        }
                    }
                }
                let o = (c * out_size + oy) * out_size + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

fn lrn_forward(
    layer: &ResolvedLayer,
    input: &[f64],
    out: &mut Vec<f64>,
    scale: &mut Vec<f64>,
) {
    let LayerSpec::Lrn { local_size, alpha, beta, k } = layer.spec else { unreachable!() };
    let ch = layer.in_channels;
    let size = layer.in_size;
    let half = local_size / 2;
    let plane = size * size;
    out.resize(ch * plane, 0.0);
    scale.resize(ch * plane, 0.0);
    for p in 0..plane {
        for c in 0..ch {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(ch - 1);
            let mut sum_sq = 0.0;
            for cc in lo..=hi {
                let v = input[cc * plane + p];
                sum_sq += v * v;
            }
            let s = k + alpha / local_size as f64 * sum_sq;
            scale[c * plane + p] = s;
            out[c * plane + p] = input[c * plane + p] * s.powf(-beta);
        }
    }
}

fn lrn_backward(
    layer: &ResolvedLayer,
    input: &[f64],
    scale: &[f64],
    grad_out: &[f64],
    grad_in: &mut Vec<f64>,
) {
    let LayerSpec::Lrn { local_size, alpha, beta, k: _ } = layer.spec else { unreachable!() };
    let ch = layer.in_channels;
    let size = layer.in_size;
    let half = local_size / 2;
    let plane = size * size;
    grad_in.clear();
    grad_in.resize(ch * plane, 0.0);
    let factor = 2.0 * alpha * beta / local_size as f64;
    for p in 0..plane {
        for c in 0..ch {
            let idx = c * plane + p;
            let s = scale[idx];
            // Direct term.
            grad_in[idx] += grad_out[idx] * s.powf(-beta);
            // Cross terms: this input appears in the normalizer of its
            // channel neighbourhood.
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(ch - 1);
            let a_i = input[idx];
            for cc in lo..=hi {
                let j = cc * plane + p;
                let s_j = scale[j];
                grad_in[idx] -=
                    factor * a_i * grad_out[j] * input[j] * s_j.powf(-beta - 1.0);
            }
        }
    }
}

fn fc_forward(layer: &ResolvedLayer, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
    let LayerSpec::Fc { width } = layer.spec else { unreachable!() };
    let n = layer.in_features;
    out.resize(width, 0.0);
    for (o, slot) in out.iter_mut().enumerate() {
        let w_base = layer.weight_offset + o * n;
        let mut acc = params[layer.bias_offset + o];
        for i in 0..n {
            acc += params[w_base + i] * input[i];
        }
        *slot = acc;
    }
}

fn fc_backward(
    layer: &ResolvedLayer,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_params: &mut [f64],
    grad_in: &mut Vec<f64>,
) {
    let LayerSpec::Fc { width } = layer.spec else { unreachable!() };
    let n = layer.in_features;
    grad_in.clear();
    grad_in.resize(n, 0.0);
    for o in 0..width {
        let g = grad_out[o];
        if g == 0.0 {
            continue;
        }
        grad_params[layer.bias_offset + o] += g;
        let w_base = layer.weight_offset + o * n;
        for i in 0..n {
            grad_params[w_base + i] += g * input[i];
            grad_in[i] += g * params[w_base + i];
        }
    }
}

impl Network {
    /// Forward pass producing the 9 head outputs `[pc, pl, pr]`.
    ///
    /// With a tape, intermediates are retained for [`Network::backward`].
    pub fn forward(&self, params: &[f64], image: &[f64], mut tape: Option<&mut Tape>) -> [f64; 9] {
        debug_assert_eq!(params.len(), self.total_params);
        debug_assert_eq!(image.len(), self.input_size * self.input_size);
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.clear();
            t.pre_activations.clear();
            t.pool_argmax.clear();
            t.lrn_scale.clear();
        }
        let mut current = image.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(current.clone());
            }
            let mut argmax = Vec::new();
            let mut scale = Vec::new();
            match layer.spec {
                LayerSpec::Conv { .. } => {
                    conv_forward(layer, params, &current, &mut next);
                    if let Some(t) = tape.as_deref_mut() {
                        t.pre_activations.push(next.clone());
                    }
                    for v in next.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                LayerSpec::Pool { .. } => {
                    pool_forward(layer, &current, &mut next, &mut argmax);
                    if let Some(t) = tape.as_deref_mut() {
                        t.pre_activations.push(Vec::new());
                    }
                }
                LayerSpec::Lrn { .. } => {
                    lrn_forward(layer, &current, &mut next, &mut scale);
                    if let Some(t) = tape.as_deref_mut() {
                        t.pre_activations.push(Vec::new());
                    }
                }
                LayerSpec::Fc { .. } => {
                    fc_forward(layer, params, &current, &mut next);
                    if let Some(t) = tape.as_deref_mut() {
                        t.pre_activations.push(next.clone());
                    }
                    for v in next.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.pool_argmax.push(argmax);
                t.lrn_scale.push(scale);
            }
            std::mem::swap(&mut current, &mut next);
        }

        if let Some(t) = tape.as_deref_mut() {
            t.features = current.clone();
        }
        let mut out = [0.0; 9];
        for h in 0..3 {
            let w_base = self.head_weight_offsets[h];
            let b_base = self.head_bias_offsets[h];
            for o in 0..3 {
                let mut acc = params[b_base + o];
                let row = w_base + o * self.feature_len;
                for i in 0..self.feature_len {
                    acc += params[row + i] * current[i];
                }
                out[3 * h + o] = acc;
            }
        }
        out
    }

    /// Accumulates parameter gradients for one sample into `grad_params`.
    ///
    /// `grad_out` is the loss gradient with respect to the 9 head outputs;
    /// the tape must come from a forward pass over the same parameters.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        grad_out: &[f64; 9],
        grad_params: &mut [f64],
    ) {
        debug_assert_eq!(grad_params.len(), self.total_params);
        // Heads.
        let mut grad_feat = vec![0.0; self.feature_len];
        for h in 0..3 {
            let w_base = self.head_weight_offsets[h];
            let b_base = self.head_bias_offsets[h];
            for o in 0..3 {
                let g = grad_out[3 * h + o];
                if g == 0.0 {
                    continue;
                }
                grad_params[b_base + o] += g;
                let row = w_base + o * self.feature_len;
                for i in 0..self.feature_len {
                    grad_params[row + i] += g * tape.features[i];
                    grad_feat[i] += g * params[row + i];
                }
            }
        }

        let mut grad_current = grad_feat;
        let mut grad_prev = Vec::new();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[li];
            match layer.spec {
                LayerSpec::Conv { .. } => {
                    let pre = &tape.pre_activations[li];
                    for (g, &p) in grad_current.iter_mut().zip(pre.iter()) {
                        if p <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    conv_backward(layer, params, input, &grad_current, grad_params, &mut grad_prev);
                }
                LayerSpec::Pool { .. } => {
                    grad_prev.clear();
                    grad_prev.resize(layer.in_channels * layer.in_size * layer.in_size, 0.0);
                    for (o, &src) in tape.pool_argmax[li].iter().enumerate() {
                        grad_prev[src] += grad_current[o];
                    }
                }
                LayerSpec::Lrn { .. } => {
                    lrn_backward(layer, input, &tape.lrn_scale[li], &grad_current, &mut grad_prev);
                }
                LayerSpec::Fc { .. } => {
                    let pre = &tape.pre_activations[li];
                    for (g, &p) in grad_current.iter_mut().zip(pre.iter()) {
                        if p <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    fc_backward(layer, params, input, &grad_current, grad_params, &mut grad_prev);
                }
            }
            std::mem::swap(&mut grad_current, &mut grad_prev);
        }
    }
}
