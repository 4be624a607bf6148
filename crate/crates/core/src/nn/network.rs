//! Networks as ordered layer lists over a shared parameter store.
//!
//! Parameters live in a [`ParamStore`] and layers reference them by id, so
//! two networks holding the same id literally share storage. That is the
//! mechanism behind resolution growth: the grown network keeps the inner
//! layer ids of its predecessor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layer::{
    conv2d_forward, conv2d_input_grad, conv2d_weight_grads, dense_forward, dense_input_grad,
    dense_weight_grads, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, upsample_backward, upsample_forward,
};
use super::{Layer, LayerKind, NnError, ParamInit, Tensor};
use crate::util::fnv1a64_f32;

/// Index of a parameter inside its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient buffer and lock flag. Locked
/// parameters receive zero gradients and are skipped by optimizer steps.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub values: Tensor,
    pub grad: Tensor,
    pub locked: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn alloc(&mut self, shape: &[usize], init: ParamInit, rng: &mut ChaCha8Rng) -> ParamId {
        let mut values = Tensor::zeros(shape);
        match init {
            ParamInit::Zero => {}
            ParamInit::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in as f32).sqrt();
                for v in values.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            ParamInit::GlorotUniform { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
                for v in values.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        let grad = Tensor::zeros(shape);
        self.params.push(Parameter {
            values,
            grad,
            locked: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Registers an already materialized parameter (checkpoint loading).
    pub fn push(&mut self, values: Tensor, locked: bool) -> ParamId {
        let grad = Tensor::zeros(values.shape());
        self.params.push(Parameter {
            values,
            grad,
            locked,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn set_locked(&mut self, id: ParamId, locked: bool) {
        self.params[id.0].locked = locked;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Fingerprint of a parameter's values; lock contracts are verified by
    /// comparing these before and after training.
    pub fn value_hash(&self, id: ParamId) -> u64 {
        fnv1a64_f32(self.params[id.0].values.data())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }
}

/// Ordered layer pipeline with fixed per-sample input/output shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl Network {
    /// Builds a network, propagating per-sample shapes through every layer
    /// and rejecting the first composition mismatch.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Self, NnError> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = infer_shape(&layer.kind, &shape).map_err(|msg| NnError::Shape {
                layer: format!("layer {i} ({})", layer.kind.name()),
                msg,
            })?;
        }
        Ok(Network {
            layers,
            input_shape,
            output_shape: shape,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Parameter ids in declaration order (weights then bias per layer).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for layer in &self.layers {
            if let Some(w) = layer.weights {
                ids.push(w);
            }
            if let Some(b) = layer.bias {
                ids.push(b);
            }
        }
        ids
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.param_ids()
            .iter()
            .map(|&id| store.get(id).values.len())
            .sum()
    }

    /// Inference pass: dropout is inactive, nothing is cached.
    pub fn forward(&self, store: &ParamStore, batch: &Tensor) -> Result<Tensor, NnError> {
        self.run_forward(store, batch, None, &mut None).map(|(out, _)| out)
    }

    /// Training pass: dropout draws seeded masks from `rng` and every layer
    /// caches what its backward step needs.
    pub fn forward_training(
        &self,
        store: &ParamStore,
        batch: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, ForwardTrace), NnError> {
        let mut trace = Some(ForwardTrace {
            saved: Vec::with_capacity(self.layers.len()),
            batch: batch.shape()[0],
        });
        let (out, trace) = self.run_forward(store, batch, Some(rng), &mut trace)?;
        Ok((out, trace.expect("trace requested")))
    }

    fn run_forward(
        &self,
        store: &ParamStore,
        batch: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
        trace: &mut Option<ForwardTrace>,
    ) -> Result<(Tensor, Option<ForwardTrace>), NnError> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(NnError::Shape {
                layer: "input".into(),
                msg: format!(
                    "batch shape {:?} does not extend input shape {:?}",
                    batch.shape(),
                    self.input_shape
                ),
            });
        }
        let b = batch.shape()[0];
        let mut cur = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut saved = Saved::None;
            cur = match &layer.kind {
                LayerKind::Conv2d { kernel, in_ch, out_ch }
                | LayerKind::Deconv2d { kernel, in_ch, out_ch } => {
                    let flip = matches!(layer.kind, LayerKind::Deconv2d { .. });
                    let w = &store.get(layer.weights.unwrap()).values;
                    let bias = &store.get(layer.bias.unwrap()).values;
                    let (h, wd) = (cur.shape()[1], cur.shape()[2]);
                    let mut out = Tensor::zeros(&[b, h, wd, *out_ch]);
                    conv2d_forward(&cur, w, bias, *kernel, *in_ch, *out_ch, flip, &mut out);
                    if trace.is_some() {
                        saved = Saved::Input(cur);
                    }
                    out
                }
                LayerKind::MaxPool2x2 => {
                    let (h, wd, c) = (cur.shape()[1], cur.shape()[2], cur.shape()[3]);
                    let mut out = Tensor::zeros(&[b, h / 2, wd / 2, c]);
                    let mut argmax = vec![0u8; out.len()];
                    maxpool_forward(&cur, &mut out, &mut argmax);
                    if trace.is_some() {
                        saved = Saved::Pool {
                            argmax,
                            in_shape: cur.shape().to_vec(),
                        };
                    }
                    out
                }
                LayerKind::Upsample2x2 => {
                    let (h, wd, c) = (cur.shape()[1], cur.shape()[2], cur.shape()[3]);
                    let mut out = Tensor::zeros(&[b, h * 2, wd * 2, c]);
                    upsample_forward(&cur, &mut out);
                    if trace.is_some() {
                        saved = Saved::Shape(cur.shape().to_vec());
                    }
                    out
                }
                LayerKind::Dense { in_features, out_shape } => {
                    let flat = cur.reshaped(&[b, *in_features]).map_err(|_| NnError::Shape {
                        layer: format!("layer {i} (Dense)"),
                        msg: format!("input does not flatten to {in_features} features"),
                    })?;
                    let out_features: usize = out_shape.iter().product();
                    let w = &store.get(layer.weights.unwrap()).values;
                    let bias = &store.get(layer.bias.unwrap()).values;
                    let mut out = Tensor::zeros(&[b, out_features]);
                    dense_forward(&flat, w, bias, *in_features, out_features, &mut out);
                    if trace.is_some() {
                        saved = Saved::Input(flat);
                    }
                    let mut full = vec![b];
                    full.extend_from_slice(out_shape);
                    out.reshaped(&full)?
                }
                LayerKind::Relu => {
                    let mut out = Tensor::zeros(cur.shape());
                    relu_forward(&cur, &mut out);
                    if trace.is_some() {
                        saved = Saved::Output(out.clone());
                    }
                    out
                }
                LayerKind::Sigmoid => {
                    let mut out = Tensor::zeros(cur.shape());
                    sigmoid_forward(&cur, &mut out);
                    if trace.is_some() {
                        saved = Saved::Output(out.clone());
                    }
                    out
                }
                LayerKind::Dropout { rate } => {
                    match rng.as_deref_mut() {
                        // Inverted dropout: scale survivors during training,
                        // identity at inference.
                        Some(rng) => {
                            let keep = 1.0 - *rate;
                            let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
                            let mask: Vec<f32> = (0..cur.len())
                                .map(|_| {
                                    if rng.gen::<f32>() < *rate {
                                        0.0
                                    } else {
                                        scale
                                    }
                                })
                                .collect();
                            let mut out = cur;
                            for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                                *v *= m;
                            }
                            if trace.is_some() {
                                saved = Saved::Mask(mask);
                            }
                            out
                        }
                        None => cur,
                    }
                }
            };
            if let Some(t) = trace.as_mut() {
                t.saved.push(saved);
            }
        }
        Ok((cur, trace.take()))
    }

    /// Backpropagates `out_grad` through the trace, accumulating gradients
    /// of unlocked parameters in the store. Input gradients still flow
    /// through locked layers; only their parameter gradients are skipped
    /// (left at zero).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        trace: &ForwardTrace,
        out_grad: &Tensor,
    ) -> Result<(), NnError> {
        if trace.saved.len() != self.layers.len() {
            return Err(NnError::State(
                "trace does not match the network that produced it".into(),
            ));
        }
        if out_grad.shape()[0] != trace.batch || out_grad.shape()[1..] != self.output_shape[..] {
            return Err(NnError::Shape {
                layer: "output".into(),
                msg: format!(
                    "gradient shape {:?} does not match output shape {:?}",
                    out_grad.shape(),
                    self.output_shape
                ),
            });
        }
        let b = trace.batch;
        let mut grad = out_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let saved = &trace.saved[i];
            grad = match &layer.kind {
                LayerKind::Conv2d { kernel, in_ch, out_ch }
                | LayerKind::Deconv2d { kernel, in_ch, out_ch } => {
                    let flip = matches!(layer.kind, LayerKind::Deconv2d { .. });
                    let Saved::Input(input) = saved else {
                        return Err(NnError::State("missing convolution cache".into()));
                    };
                    let wid = layer.weights.unwrap();
                    let bid = layer.bias.unwrap();
                    if !store.get(wid).locked {
                        let mut gw = std::mem::replace(&mut store.get_mut(wid).grad, Tensor::zeros(&[0]));
                        let mut gb = std::mem::replace(&mut store.get_mut(bid).grad, Tensor::zeros(&[0]));
                        conv2d_weight_grads(input, &grad, *kernel, *in_ch, *out_ch, flip, &mut gw, &mut gb);
                        store.get_mut(wid).grad = gw;
                        store.get_mut(bid).grad = gb;
                    }
                    let mut gin = Tensor::zeros(input.shape());
                    conv2d_input_grad(&grad, &store.get(wid).values, *kernel, *in_ch, *out_ch, flip, &mut gin);
                    gin
                }
                LayerKind::MaxPool2x2 => {
                    let Saved::Pool { argmax, in_shape } = saved else {
                        return Err(NnError::State("missing pool cache".into()));
                    };
                    let mut gin = Tensor::zeros(in_shape);
                    maxpool_backward(&grad, argmax, &mut gin);
                    gin
                }
                LayerKind::Upsample2x2 => {
                    let Saved::Shape(in_shape) = saved else {
                        return Err(NnError::State("missing upsample cache".into()));
                    };
                    let mut gin = Tensor::zeros(in_shape);
                    upsample_backward(&grad, &mut gin);
                    gin
                }
                LayerKind::Dense { in_features, out_shape } => {
                    let Saved::Input(input) = saved else {
                        return Err(NnError::State("missing dense cache".into()));
                    };
                    let out_features: usize = out_shape.iter().product();
                    let flat_grad = grad.reshaped(&[b, out_features])?;
                    let wid = layer.weights.unwrap();
                    let bid = layer.bias.unwrap();
                    if !store.get(wid).locked {
                        let mut gw = std::mem::replace(&mut store.get_mut(wid).grad, Tensor::zeros(&[0]));
                        let mut gb = std::mem::replace(&mut store.get_mut(bid).grad, Tensor::zeros(&[0]));
                        dense_weight_grads(input, &flat_grad, *in_features, out_features, &mut gw, &mut gb);
                        store.get_mut(wid).grad = gw;
                        store.get_mut(bid).grad = gb;
                    }
                    let mut gin = Tensor::zeros(&[b, *in_features]);
                    dense_input_grad(&flat_grad, &store.get(wid).values, *in_features, out_features, &mut gin);
                    gin
                }
                LayerKind::Relu => {
                    let Saved::Output(out) = saved else {
                        return Err(NnError::State("missing relu cache".into()));
                    };
                    let mut gin = Tensor::zeros(out.shape());
                    relu_backward(&grad, out, &mut gin);
                    gin
                }
                LayerKind::Sigmoid => {
                    let Saved::Output(out) = saved else {
                        return Err(NnError::State("missing sigmoid cache".into()));
                    };
                    let mut gin = Tensor::zeros(out.shape());
                    sigmoid_backward(&grad, out, &mut gin);
                    gin
                }
                LayerKind::Dropout { .. } => match saved {
                    Saved::Mask(mask) => {
                        let mut gin = grad;
                        for (v, m) in gin.data_mut().iter_mut().zip(mask) {
                            *v *= m;
                        }
                        gin
                    }
                    _ => grad,
                },
            };
        }
        Ok(())
    }
}

fn infer_shape(kind: &LayerKind, shape: &[usize]) -> Result<Vec<usize>, String> {
    match kind {
        LayerKind::Conv2d { kernel, in_ch, out_ch }
        | LayerKind::Deconv2d { kernel, in_ch, out_ch } => {
            if kernel % 2 == 0 {
                return Err(format!("kernel side {kernel} must be odd"));
            }
            if shape.len() != 3 || shape[2] != *in_ch {
                return Err(format!(
                    "expected [h, w, {in_ch}] input, got {shape:?}"
                ));
            }
            Ok(vec![shape[0], shape[1], *out_ch])
        }
        LayerKind::MaxPool2x2 => {
            if shape.len() != 3 || shape[0] % 2 != 0 || shape[1] % 2 != 0 {
                return Err(format!("expected even [h, w, c] input, got {shape:?}"));
            }
            Ok(vec![shape[0] / 2, shape[1] / 2, shape[2]])
        }
        LayerKind::Upsample2x2 => {
            if shape.len() != 3 {
                return Err(format!("expected [h, w, c] input, got {shape:?}"));
            }
            Ok(vec![shape[0] * 2, shape[1] * 2, shape[2]])
        }
        LayerKind::Dense { in_features, out_shape } => {
            let vol: usize = shape.iter().product();
            if vol != *in_features {
                return Err(format!(
                    "input {shape:?} has {vol} values, dense expects {in_features}"
                ));
            }
            Ok(out_shape.clone())
        }
        LayerKind::Relu | LayerKind::Sigmoid => Ok(shape.to_vec()),
        LayerKind::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(format!("dropout rate {rate} outside [0, 1)"));
            }
            Ok(shape.to_vec())
        }
    }
}

/// Per-layer activation cache from a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    saved: Vec<Saved>,
    batch: usize,
}

#[derive(Debug, Clone)]
enum Saved {
    None,
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
    Pool { argmax: Vec<u8>, in_shape: Vec<usize> },
    Mask(Vec<f32>),
}
