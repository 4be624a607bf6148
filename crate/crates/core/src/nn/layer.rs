//! Layer vocabulary and the CPU kernels behind forward/backward passes.
//!
//! Activations are stored `[batch, height, width, channels]`; convolution
//! weights are `[k, k, in_ch, out_ch]`. Convolutions are stride-1 with
//! symmetric "same" padding (kernel side must be odd). The transposed
//! variant shares the same core with a spatially reversed kernel, so both
//! preserve the spatial size and differ only in orientation.
//!
//! Parallel loops only ever split disjoint output rows or disjoint weight
//! slices; accumulation order inside each slice is fixed, keeping results
//! bit-identical across worker counts.

use super::network::ParamId;
use super::Tensor;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
    },
    Deconv2d {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
    },
    MaxPool2x2,
    Upsample2x2,
    Dense {
        in_features: usize,
        out_shape: Vec<usize>,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f32,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "Conv2d",
            LayerKind::Deconv2d { .. } => "Deconv2d",
            LayerKind::MaxPool2x2 => "MaxPool2x2",
            LayerKind::Upsample2x2 => "Upsample2x2",
            LayerKind::Dense { .. } => "Dense",
            LayerKind::Relu => "Relu",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::Dropout { .. } => "Dropout",
        }
    }
}

/// One network layer: a kind plus the ids of its parameters, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub weights: Option<ParamId>,
    pub bias: Option<ParamId>,
}

impl Layer {
    pub fn stateless(kind: LayerKind) -> Self {
        Layer {
            kind,
            weights: None,
            bias: None,
        }
    }
}

/// Weight initialization family. ReLU-facing layers scale by fan-in only;
/// the sigmoid head uses the symmetric fan-average bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    Zero,
    HeUniform { fan_in: usize },
    GlorotUniform { fan_in: usize, fan_out: usize },
}

/// Reorders `[k,k,ic,oc]` weights into `[k,k,oc,ic]`, optionally reversing
/// the spatial taps. Used to express input gradients through the forward
/// core with contiguous inner rows.
fn transpose_weights(w: &[f32], k: usize, ic: usize, oc: usize, reverse: bool) -> Vec<f32> {
    let mut out = vec![0.0f32; w.len()];
    for e in 0..k {
        for f in 0..k {
            let (se, sf) = if reverse { (k - 1 - e, k - 1 - f) } else { (e, f) };
            let src = ((se * k + sf) * ic) * oc;
            let dst = ((e * k + f) * oc) * ic;
            for i in 0..ic {
                for o in 0..oc {
                    out[dst + o * ic + i] = w[src + i * oc + o];
                }
            }
        }
    }
    out
}

/// Spatially reverses `[k,k,ic,oc]` taps (channel order untouched).
fn reverse_taps(w: &[f32], k: usize, ic: usize, oc: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w.len()];
    let stride = ic * oc;
    for e in 0..k {
        for f in 0..k {
            let src = ((k - 1 - e) * k + (k - 1 - f)) * stride;
            let dst = (e * k + f) * stride;
            out[dst..dst + stride].copy_from_slice(&w[src..src + stride]);
        }
    }
    out
}

/// Stride-1 same-padding cross-correlation core. `input` is `[B,H,W,IC]`,
/// `weights` `[k,k,IC,OC]` (already oriented by the caller), `out`
/// `[B,H,W,OC]`. Parallel over output rows.
fn conv_core(
    input: &[f32],
    weights: &[f32],
    bias: Option<&[f32]>,
    batch: usize,
    h: usize,
    w: usize,
    ic: usize,
    oc: usize,
    k: usize,
    out: &mut [f32],
) {
    let p = k / 2;
    par::for_each_chunk_mut(out, w * oc, |row_idx, out_row| {
        let b = row_idx / h;
        let y = row_idx % h;
        for x in 0..w {
            let px = &mut out_row[x * oc..(x + 1) * oc];
            match bias {
                Some(bias) => px.copy_from_slice(bias),
                None => px.iter_mut().for_each(|v| *v = 0.0),
            }
            for dy in 0..k {
                let yy = y + dy;
                if yy < p || yy - p >= h {
                    continue;
                }
                let yy = yy - p;
                for dx in 0..k {
                    let xx = x + dx;
                    if xx < p || xx - p >= w {
                        continue;
                    }
                    let xx = xx - p;
                    let in_px = &input[((b * h + yy) * w + xx) * ic..][..ic];
                    let w_tap = &weights[((dy * k + dx) * ic) * oc..][..ic * oc];
                    for (i, &a) in in_px.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let w_row = &w_tap[i * oc..(i + 1) * oc];
                        for (o, wv) in w_row.iter().enumerate() {
                            px[o] += a * wv;
                        }
                    }
                }
            }
        }
    });
}

/// Forward pass shared by both convolution orientations.
/// `flip` selects the transposed (spatially reversed) variant.
pub(crate) fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    k: usize,
    ic: usize,
    oc: usize,
    flip: bool,
    out: &mut Tensor,
) {
    let (b, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oriented;
    let w_data = if flip {
        oriented = reverse_taps(weights.data(), k, ic, oc);
        oriented.as_slice()
    } else {
        weights.data()
    };
    conv_core(
        input.data(),
        w_data,
        Some(bias.data()),
        b,
        h,
        w,
        ic,
        oc,
        k,
        out.data_mut(),
    );
}

/// Gradient w.r.t. the convolution input.
pub(crate) fn conv2d_input_grad(
    gout: &Tensor,
    weights: &Tensor,
    k: usize,
    ic: usize,
    oc: usize,
    flip: bool,
    gin: &mut Tensor,
) {
    let (b, h, w) = (gout.shape()[0], gout.shape()[1], gout.shape()[2]);
    // Adjoint of the forward core: opposite orientation, channels swapped.
    let wt = transpose_weights(weights.data(), k, ic, oc, !flip);
    conv_core(
        gout.data(),
        &wt,
        None,
        b,
        h,
        w,
        oc,
        ic,
        k,
        gin.data_mut(),
    );
}

/// Accumulates weight and bias gradients. Parallel over the k*k taps; each
/// tap owns a disjoint `[ic*oc]` slice of the weight gradient.
pub(crate) fn conv2d_weight_grads(
    input: &Tensor,
    gout: &Tensor,
    k: usize,
    ic: usize,
    oc: usize,
    flip: bool,
    gw: &mut Tensor,
    gb: &mut Tensor,
) {
    let (b, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let p = k / 2;
    let in_data = input.data();
    let g_data = gout.data();
    par::for_each_chunk_mut(gw.data_mut(), ic * oc, |tap, slot| {
        let (a, bb) = (tap / k, tap % k);
        let (dy, dx) = if flip {
            (k - 1 - a, k - 1 - bb)
        } else {
            (a, bb)
        };
        for s in 0..b {
            for y in 0..h {
                let yy = y + dy;
                if yy < p || yy - p >= h {
                    continue;
                }
                let yy = yy - p;
                for x in 0..w {
                    let xx = x + dx;
                    if xx < p || xx - p >= w {
                        continue;
                    }
                    let xx = xx - p;
                    let in_px = &in_data[((s * h + yy) * w + xx) * ic..][..ic];
                    let g_px = &g_data[((s * h + y) * w + x) * oc..][..oc];
                    for (i, &v) in in_px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let row = &mut slot[i * oc..(i + 1) * oc];
                        for (o, g) in g_px.iter().enumerate() {
                            row[o] += v * g;
                        }
                    }
                }
            }
        }
    });
    let gb = gb.data_mut();
    for s in 0..b * h * w {
        let g_px = &g_data[s * oc..(s + 1) * oc];
        for (o, g) in g_px.iter().enumerate() {
            gb[o] += g;
        }
    }
}

pub(crate) fn maxpool_forward(input: &Tensor, out: &mut Tensor, argmax: &mut [u8]) {
    let (_, h, w, c) = dims4(input);
    let (oh, ow) = (h / 2, w / 2);
    let in_data = input.data();
    par::for_each_chunk_mut2(out.data_mut(), ow * c, argmax, ow * c, |row_idx, out_row, am_row| {
        let s = row_idx / oh;
        let oy = row_idx % oh;
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut where_ = 0u8;
                for (slot, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    let v = in_data[((s * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ch];
                    if v > best {
                        best = v;
                        where_ = slot as u8;
                    }
                }
                out_row[ox * c + ch] = best;
                am_row[ox * c + ch] = where_;
            }
        }
    });
}

pub(crate) fn maxpool_backward(gout: &Tensor, argmax: &[u8], gin: &mut Tensor) {
    let (_, oh, ow, c) = dims4(gout);
    let (h, w) = (oh * 2, ow * 2);
    let g_data = gout.data();
    // Per-sample scatter keeps writes disjoint.
    par::for_each_chunk_mut(gin.data_mut(), h * w * c, |s, gin_s| {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let idx = ((s * oh + oy) * ow + ox) * c + ch;
                    let slot = argmax[idx] as usize;
                    let (dy, dx) = [(0, 0), (0, 1), (1, 0), (1, 1)][slot];
                    gin_s[((oy * 2 + dy) * w + ox * 2 + dx) * c + ch] += g_data[idx];
                }
            }
        }
    });
}

pub(crate) fn upsample_forward(input: &Tensor, out: &mut Tensor) {
    let (_, h, w, c) = dims4(input);
    let ow = w * 2;
    let in_data = input.data();
    par::for_each_chunk_mut(out.data_mut(), ow * c, |row_idx, out_row| {
        let s = row_idx / (h * 2);
        let oy = row_idx % (h * 2);
        let iy = oy / 2;
        for ox in 0..ow {
            let src = &in_data[((s * h + iy) * w + ox / 2) * c..][..c];
            out_row[ox * c..(ox + 1) * c].copy_from_slice(src);
        }
    });
}

pub(crate) fn upsample_backward(gout: &Tensor, gin: &mut Tensor) {
    let (_, oh, ow, c) = dims4(gout);
    let (h, w) = (oh / 2, ow / 2);
    let g_data = gout.data();
    par::for_each_chunk_mut(gin.data_mut(), w * c, |row_idx, gin_row| {
        let s = row_idx / h;
        let y = row_idx % h;
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += g_data[((s * oh + y * 2 + dy) * ow + x * 2 + dx) * c + ch];
                    }
                }
                gin_row[x * c + ch] = acc;
            }
        }
    });
}

pub(crate) fn dense_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    in_features: usize,
    out_features: usize,
    out: &mut Tensor,
) {
    let in_data = input.data();
    let w_data = weights.data();
    let bias = bias.data();
    par::for_each_chunk_mut(out.data_mut(), out_features, |s, out_row| {
        out_row.copy_from_slice(bias);
        let x = &in_data[s * in_features..(s + 1) * in_features];
        for (v, &a) in x.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let w_row = &w_data[v * out_features..(v + 1) * out_features];
            for (u, wv) in w_row.iter().enumerate() {
                out_row[u] += a * wv;
            }
        }
    });
}

pub(crate) fn dense_input_grad(
    gout: &Tensor,
    weights: &Tensor,
    in_features: usize,
    out_features: usize,
    gin: &mut Tensor,
) {
    let g_data = gout.data();
    let w_data = weights.data();
    par::for_each_chunk_mut(gin.data_mut(), in_features, |s, gin_row| {
        let g = &g_data[s * out_features..(s + 1) * out_features];
        for (v, slot) in gin_row.iter_mut().enumerate() {
            let w_row = &w_data[v * out_features..(v + 1) * out_features];
            let mut acc = 0.0f32;
            for (u, wv) in w_row.iter().enumerate() {
                acc += g[u] * wv;
            }
            *slot = acc;
        }
    });
}

pub(crate) fn dense_weight_grads(
    input: &Tensor,
    gout: &Tensor,
    in_features: usize,
    out_features: usize,
    gw: &mut Tensor,
    gb: &mut Tensor,
) {
    let b = input.shape()[0];
    let in_data = input.data();
    let g_data = gout.data();
    par::for_each_chunk_mut(gw.data_mut(), out_features, |v, row| {
        for s in 0..b {
            let a = in_data[s * in_features + v];
            if a == 0.0 {
                continue;
            }
            let g = &g_data[s * out_features..(s + 1) * out_features];
            for (u, gv) in g.iter().enumerate() {
                row[u] += a * gv;
            }
        }
    });
    let gb = gb.data_mut();
    for s in 0..b {
        let g = &g_data[s * out_features..(s + 1) * out_features];
        for (u, gv) in g.iter().enumerate() {
            gb[u] += gv;
        }
    }
}

pub(crate) fn relu_forward(input: &Tensor, out: &mut Tensor) {
    let in_data = input.data();
    par::for_each_chunk_mut(out.data_mut(), out_chunk(in_data.len()), |i, chunk| {
        let base = i * chunk.len();
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = in_data[base + j].max(0.0);
        }
    });
}

pub(crate) fn relu_backward(gout: &Tensor, saved_out: &Tensor, gin: &mut Tensor) {
    let g = gout.data();
    let s = saved_out.data();
    for (i, v) in gin.data_mut().iter_mut().enumerate() {
        *v = if s[i] > 0.0 { g[i] } else { 0.0 };
    }
}

pub(crate) fn sigmoid_forward(input: &Tensor, out: &mut Tensor) {
    let in_data = input.data();
    par::for_each_chunk_mut(out.data_mut(), out_chunk(in_data.len()), |i, chunk| {
        let base = i * chunk.len();
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = 1.0 / (1.0 + (-in_data[base + j]).exp());
        }
    });
}

pub(crate) fn sigmoid_backward(gout: &Tensor, saved_out: &Tensor, gin: &mut Tensor) {
    let g = gout.data();
    let s = saved_out.data();
    for (i, v) in gin.data_mut().iter_mut().enumerate() {
        *v = g[i] * s[i] * (1.0 - s[i]);
    }
}

/// Picks an even chunk size for elementwise parallel loops.
fn out_chunk(len: usize) -> usize {
    for candidate in [4096usize, 1024, 256, 64, 16, 4, 2, 1] {
        if len % candidate == 0 {
            return candidate;
        }
    }
    1
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    debug_assert!(s.len() == 4);
    (s[0], s[1], s[2], s[3])
}
