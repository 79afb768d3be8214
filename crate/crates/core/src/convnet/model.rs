use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::arch::{stack_channels, Architecture, LayerSpec, Shape, FULL_STACK_CHANNELS};
use crate::dataset::{PATCH, STACK_LEN};
use crate::error::{Error, Result};

/// Probabilities are clamped to this distance from 0 and 1 inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Weights and biases of one layer (both empty for parameter-free layers).
/// Conv weights are `[filter][in_channel][row][col]`, dense weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter arrays; also used for gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: arch
                .layers
                .iter()
                .map(|l| {
                    let (w, b) = l.param_counts();
                    LayerParams {
                        weights: vec![0.0; w],
                        bias: vec![0.0; b],
                    }
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

/// A patch classifier: architecture plus parameters, producing one boundary
/// probability per input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    arch: Architecture,
    shapes: Vec<Shape>,
    params: Params,
}

/// Activations recorded by a forward pass, needed for backpropagation.
struct Trace {
    /// `outputs[0]` is the input, `outputs[i + 1]` the output of layer `i`.
    outputs: Vec<Vec<f64>>,
    /// Winning input index per output element, for each max-pool layer.
    pool_argmax: Vec<Vec<usize>>,
}

impl NetworkModel {
    /// Zero biases and N(0, std²) weights drawn from `rng`.
    pub fn init(arch: Architecture, weight_init_std: f64, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0, weight_init_std)
            .map_err(|e| Error::invalid(format!("weight_init_std: {e}")))?;
        let mut params = Params::zeros(&arch);
        for layer in &mut params.layers {
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
        }
        Self::from_params(arch, params)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let params = Params::zeros(&arch);
        Self::from_params(arch, params)
    }

    pub fn from_params(arch: Architecture, params: Params) -> Result<Self> {
        let shapes = arch.shapes()?;
        if !params.same_shape(&Params::zeros(&arch)) {
            return Err(Error::invalid("parameter arrays do not match architecture"));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self {
            arch,
            shapes,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Round every parameter to f32 precision, the precision model files store.
    pub fn round_to_storage(&mut self) {
        for p in self.params.iter_mut() {
            *p = *p as f32 as f64;
        }
    }

    /// Length of an input accepted by [`Self::logit`] as-is.
    pub fn input_len(&self) -> usize {
        self.arch.input.len()
    }

    /// Map an input to the network's input layout. Inputs already of the
    /// input length pass through; a full 9-channel sample stack is narrowed to
    /// the crop scales the network was built for.
    pub fn gather_input<'a>(&self, x: &'a [f64]) -> Result<std::borrow::Cow<'a, [f64]>> {
        if x.len() == self.input_len() {
            return Ok(std::borrow::Cow::Borrowed(x));
        }
        if x.len() == STACK_LEN && !self.arch.scales.is_empty() {
            let plane = PATCH * PATCH;
            let mut out = Vec::with_capacity(self.input_len());
            for ch in stack_channels(&self.arch.scales) {
                debug_assert!(ch < FULL_STACK_CHANNELS);
                out.extend_from_slice(&x[ch * plane..(ch + 1) * plane]);
            }
            return Ok(std::borrow::Cow::Owned(out));
        }
        Err(Error::invalid(format!(
            "input has {} values, network expects {} ({})",
            x.len(),
            self.input_len(),
            self.arch.input
        )))
    }

    /// Forward pass. With `keep`, `outputs[0]` is the input and
    /// `outputs[i + 1]` the output of layer `i`; otherwise only the final
    /// output is kept.
    fn run(&self, x: &[f64], keep: bool) -> Trace {
        let mut outputs: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pool_argmax = Vec::new();
        let mut shape = self.arch.input;
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let current = outputs.last().unwrap();
            let p = &self.params.layers[i];
            let out_shape = self.shapes[i];
            let next = match *layer {
                LayerSpec::Conv { kernel, .. } => {
                    conv_forward(current, shape, p, out_shape, kernel)
                }
                LayerSpec::MaxPool => {
                    let (out, arg) = maxpool_forward(current, shape, out_shape);
                    pool_argmax.push(arg);
                    out
                }
                LayerSpec::Relu => current.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => (0..out_features)
                    .map(|o| {
                        let row = &p.weights[o * in_features..(o + 1) * in_features];
                        p.bias[o] + row.iter().zip(current).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect(),
                LayerSpec::Sigmoid => current.iter().map(|&v| sigmoid(v)).collect(),
            };
            if !keep {
                outputs.clear();
            }
            outputs.push(next);
            shape = out_shape;
        }
        Trace {
            outputs,
            pool_argmax,
        }
    }

    /// Pre-sigmoid score for one input.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        let x = self.gather_input(x)?;
        let trace = self.run(&x, true);
        let n = trace.outputs.len();
        Ok(trace.outputs[n - 2][0])
    }

    /// Boundary probability for one input.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let x = self.gather_input(x)?;
        Ok(self.run(&x, false).outputs[0][0])
    }

    /// Boundary probability for each input of a batch.
    pub fn forward(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>> {
        batch.par_iter().map(|x| self.predict(x)).collect()
    }

    /// Binary cross-entropy of one sample and the gradient of `scale × loss`.
    fn sample_gradients(&self, x: &[f64], label: bool, scale: f64) -> (f64, Params) {
        let trace = self.run(x, true);
        let y = if label { 1.0 } else { 0.0 };
        let p_raw = trace.outputs.last().unwrap()[0];
        let p = p_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        // sigmoid and cross-entropy fused: d loss / d logit = p - y
        let dlogit = if p == p_raw { (p - y) * scale } else { 0.0 };

        let mut grads = Params::zeros(&self.arch);
        let n_layers = self.arch.layers.len();
        let mut delta = vec![dlogit];
        let mut pool_idx = trace.pool_argmax.len();
        for i in (0..n_layers - 1).rev() {
            let input = &trace.outputs[i];
            let in_shape = if i == 0 {
                self.arch.input
            } else {
                self.shapes[i - 1]
            };
            let need_input_grad = i > 0;
            let p = &self.params.layers[i];
            let g = &mut grads.layers[i];
            delta = match self.arch.layers[i] {
                LayerSpec::Conv { kernel, .. } => conv_backward(
                    input,
                    in_shape,
                    p,
                    &delta,
                    self.shapes[i],
                    kernel,
                    g,
                    need_input_grad,
                ),
                LayerSpec::MaxPool => {
                    pool_idx -= 1;
                    let mut d = vec![0.0; in_shape.len()];
                    for (o, &src) in trace.pool_argmax[pool_idx].iter().enumerate() {
                        d[src] += delta[o];
                    }
                    d
                }
                LayerSpec::Relu => input
                    .iter()
                    .zip(&delta)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect(),
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let mut d = vec![0.0; in_features];
                    for o in 0..out_features {
                        let go = delta[o];
                        g.bias[o] += go;
                        let row = &p.weights[o * in_features..(o + 1) * in_features];
                        let grow = &mut g.weights[o * in_features..(o + 1) * in_features];
                        for k in 0..in_features {
                            grow[k] += go * input[k];
                            d[k] += go * row[k];
                        }
                    }
                    d
                }
                LayerSpec::Sigmoid => {
                    let out = &trace.outputs[i + 1];
                    out.iter()
                        .zip(&delta)
                        .map(|(&s, &d)| d * s * (1.0 - s))
                        .collect()
                }
            };
        }
        (loss, grads)
    }

    /// Mean binary cross-entropy over a batch and its gradient with respect to
    /// every parameter. Per-sample work may run in parallel; the reduction is
    /// in batch order, so results do not depend on the thread count.
    pub fn loss_and_gradients(&self, batch: &[Vec<f64>], labels: &[bool]) -> Result<(f64, Params)> {
        if batch.len() != labels.len() {
            return Err(Error::invalid("batch and label counts differ"));
        }
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<(f64, Params)> = batch
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &y)| {
                let x = self.gather_input(x)?;
                Ok(self.sample_gradients(&x, y, scale))
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut total = Params::zeros(&self.arch);
        for (l, g) in &parts {
            loss += l;
            total.add_assign(g);
        }
        Ok((loss * scale, total))
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn conv_forward(x: &[f64], in_s: Shape, p: &LayerParams, out_s: Shape, k: usize) -> Vec<f64> {
    let (oh, ow) = (out_s.height, out_s.width);
    let plane_in = in_s.height * in_s.width;
    let mut out = vec![0.0; out_s.len()];
    for f in 0..out_s.channels {
        let o = &mut out[f * oh * ow..(f + 1) * oh * ow];
        o.fill(p.bias[f]);
        for c in 0..in_s.channels {
            let xin = &x[c * plane_in..(c + 1) * plane_in];
            let wbase = (f * in_s.channels + c) * k * k;
            for a in 0..k {
                for b in 0..k {
                    let w = p.weights[wbase + a * k + b];
                    for i in 0..oh {
                        let src = &xin[(i + a) * in_s.width + b..(i + a) * in_s.width + b + ow];
                        let dst = &mut o[i * ow..(i + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    in_s: Shape,
    p: &LayerParams,
    delta: &[f64],
    out_s: Shape,
    k: usize,
    g: &mut LayerParams,
    need_input_grad: bool,
) -> Vec<f64> {
    let (oh, ow) = (out_s.height, out_s.width);
    let plane_in = in_s.height * in_s.width;
    let mut dx = if need_input_grad {
        vec![0.0; in_s.len()]
    } else {
        Vec::new()
    };
    for f in 0..out_s.channels {
        let d = &delta[f * oh * ow..(f + 1) * oh * ow];
        g.bias[f] += d.iter().sum::<f64>();
        for c in 0..in_s.channels {
            let xin = &x[c * plane_in..(c + 1) * plane_in];
            let wbase = (f * in_s.channels + c) * k * k;
            for a in 0..k {
                for b in 0..k {
                    let w = p.weights[wbase + a * k + b];
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let row = (i + a) * in_s.width + b;
                        let drow = &d[i * ow..(i + 1) * ow];
                        acc += drow
                            .iter()
                            .zip(&xin[row..row + ow])
                            .map(|(dv, xv)| dv * xv)
                            .sum::<f64>();
                        if need_input_grad {
                            let dxrow = &mut dx[c * plane_in + row..c * plane_in + row + ow];
                            for (t, dv) in dxrow.iter_mut().zip(drow) {
                                *t += w * dv;
                            }
                        }
                    }
                    g.weights[wbase + a * k + b] += acc;
                }
            }
        }
    }
    dx
}

fn maxpool_forward(x: &[f64], in_s: Shape, out_s: Shape) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(out_s.len());
    let mut arg = Vec::with_capacity(out_s.len());
    for c in 0..out_s.channels {
        for i in 0..out_s.height {
            for j in 0..out_s.width {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = (c * in_s.height + 2 * i + di) * in_s.width + 2 * j + dj;
                    if x[idx] > best_v {
                        best_v = x[idx];
                        best = idx;
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
