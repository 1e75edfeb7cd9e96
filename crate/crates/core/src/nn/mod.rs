//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! A layer computes `affine → dropout → layer norm → activation`. That order
//! gives the dropout-then-normalize critic layers directly, and a layer with
//! dropout but no norm is the `Linear → ReLU → Dropout` block of the success
//! classifier, since scaling by a nonnegative mask commutes with ReLU.

mod adam;
mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, LossSpec};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{gemm_acc, transpose, Matrix};

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Dropout masks are sampled.
    Train,
    /// Dropout is the identity; the rng is never touched.
    Eval,
}

/// Shape and flags of one layer, used to build a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub layer_norm: bool,
    pub dropout: f64,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { inputs, outputs, activation, layer_norm: false, dropout: 0.0 }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn with_layer_norm(mut self) -> Self {
        self.layer_norm = true;
        self
    }
}

/// Stacks `hidden` equal layers of width `width` followed by a linear head.
pub fn stack(
    inputs: usize,
    hidden: &[usize],
    outputs: usize,
    hidden_layer: impl Fn(usize, usize) -> LayerSpec,
) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = inputs;
    for &h in hidden {
        specs.push(hidden_layer(prev, h));
        prev = h;
    }
    specs.push(LayerSpec::dense(prev, outputs, Activation::Identity));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
    pub norm: Option<LayerNorm>,
}

impl Layer {
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }
}

/// Parameters of a dense network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub input: Matrix,
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Scaled keep mask (`0` or `1/keep`); `None` means all ones.
    pub mask: Option<Vec<f64>>,
    /// Normalized pre-gain values and per-row `1/σ`, when the layer normalizes.
    pub normalized: Option<Matrix>,
    pub inv_std: Vec<f64>,
    pub output: Matrix,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.layers.last().map_or(&self.input, |l| &l.output)
    }
}

impl Mlp {
    /// Builds a network with uniform `±√(1/fan_in)` initialization.
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let bound = libm::sqrt(1.0 / spec.inputs.max(1) as f64);
            let weights = (0..spec.inputs * spec.outputs)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let bias = (0..spec.outputs).map(|_| rng.random_range(-bound..=bound)).collect();
            let norm = spec.layer_norm.then(|| LayerNorm {
                gain: vec![1.0; spec.outputs],
                shift: vec![0.0; spec.outputs],
            });
            layers.push(Layer {
                inputs: spec.inputs,
                outputs: spec.outputs,
                weights,
                bias,
                activation: spec.activation,
                dropout: spec.dropout,
                norm,
            });
        }
        Self::from_layers(layers)
    }

    /// Validates and wraps explicit layers.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let mlp = Self { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape(format!("layer {i} parameter sizes disagree with its dims")));
            }
            if let Some(n) = &l.norm {
                if n.gain.len() != l.outputs || n.shift.len() != l.outputs {
                    return Err(Error::Shape(format!("layer {i} norm sizes disagree with its width")));
                }
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::Validation(format!("layer {i} dropout {} outside [0, 1)", l.dropout)));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.inputs,
                    i - 1,
                    self.layers[i - 1].outputs
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same architecture, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Parameter tensors in a fixed order: per layer weights, bias, then gain and shift.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
            if let Some(n) = &l.norm {
                out.push(n.gain.as_slice());
                out.push(n.shift.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(n) = &mut l.norm {
                out.push(n.gain.as_mut_slice());
                out.push(n.shift.as_mut_slice());
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs
                    && a.outputs == b.outputs
                    && a.activation == b.activation
                    && a.norm.is_some() == b.norm.is_some()
            })
    }

    /// Multiplies the output layer's weights and bias by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("validated network has layers");
        last.weights.iter_mut().for_each(|w| *w *= factor);
        last.bias.iter_mut().for_each(|b| *b *= factor);
    }

    /// `self ← (1 − tau)·self + tau·other`.
    pub fn lerp_toward(&mut self, other: &Mlp, tau: f64) {
        debug_assert!(self.same_shape(other));
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (1.0 - tau) * *d + tau * s;
            }
        }
    }

    /// Forward pass for a single input vector.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let trace = self.forward_batch(&x, mode, rng)?;
        Ok((trace.output().data.clone(), trace))
    }

    /// Forward pass over the rows of `input`, keeping what backward needs.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        input: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &layers[i - 1].output };
            layers.push(layer_forward(layer, x, mode, rng));
        }
        Ok(ForwardTrace { mode, input: input.clone(), layers })
    }

    /// Eval-mode outputs without a trace.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut no_rng = NoRng;
        for layer in &self.layers {
            x = layer_forward(layer, &x, Mode::Eval, &mut no_rng).output;
        }
        Ok(x)
    }

    /// Eval-mode output for one input vector.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::from_vec(1, input.len(), input.to_vec())?)?.data)
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.cols
            )));
        }
        ensure_finite(&input.data, "network input")
    }

    /// Exact gradients of `Σ grad_output ⊙ output` through the traced computation.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Matrix) -> Result<(Mlp, Matrix)> {
        let (grads, gin) = self.backward_with(trace, grad_output, true)?;
        Ok((grads.expect("parameter gradients requested"), gin))
    }

    /// Gradient with respect to the input only; parameter gradients are skipped.
    pub fn backward_input(&self, trace: &ForwardTrace, grad_output: &Matrix) -> Result<Matrix> {
        Ok(self.backward_with(trace, grad_output, false)?.1)
    }

    fn backward_with(
        &self,
        trace: &ForwardTrace,
        grad_output: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Mlp>, Matrix)> {
        if trace.layers.len() != self.layers.len()
            || trace.output().cols != grad_output.cols
            || trace.output().rows != grad_output.rows
            || trace.input.cols != self.input_dim()
        {
            return Err(Error::Shape("trace does not match network or gradient".into()));
        }
        let rows = grad_output.rows;
        let mut grads = want_params.then(|| self.zeros_like());
        let mut g = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let t = &trace.layers[l];
            if t.output.cols != layer.outputs {
                return Err(Error::Shape(format!("trace layer {l} width mismatch")));
            }
            let x = if l == 0 { &trace.input } else { &trace.layers[l - 1].output };
            match layer.activation {
                Activation::Relu => {
                    for (gv, o) in g.data.iter_mut().zip(&t.output.data) {
                        if *o <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                Activation::Tanh => {
                    for (gv, o) in g.data.iter_mut().zip(&t.output.data) {
                        *gv *= 1.0 - o * o;
                    }
                }
                Activation::Identity => {}
            }
            if let (Some(norm), Some(xhat)) = (&layer.norm, &t.normalized) {
                let width = layer.outputs as f64;
                for r in 0..rows {
                    let xr = xhat.row(r);
                    let gr = g.row_mut(r);
                    if let Some(gl) = grads.as_mut() {
                        let gn = gl.layers[l].norm.as_mut().expect("same shape");
                        for j in 0..gr.len() {
                            gn.gain[j] += gr[j] * xr[j];
                            gn.shift[j] += gr[j];
                        }
                    }
                    let mut sum = 0.0;
                    let mut sum_x = 0.0;
                    for j in 0..gr.len() {
                        let d = gr[j] * norm.gain[j];
                        gr[j] = d;
                        sum += d;
                        sum_x += d * xr[j];
                    }
                    let mean = sum / width;
                    let mean_x = sum_x / width;
                    let inv_std = t.inv_std[r];
                    for j in 0..gr.len() {
                        gr[j] = inv_std * (gr[j] - mean - xr[j] * mean_x);
                    }
                }
            }
            if let Some(mask) = &t.mask {
                for (gv, m) in g.data.iter_mut().zip(mask) {
                    *gv *= m;
                }
            }
            if let Some(gl) = grads.as_mut() {
                let gt = transpose(&g.data, rows, layer.outputs);
                let gw = &mut gl.layers[l].weights;
                gemm_acc(layer.outputs, layer.inputs, rows, &gt, &x.data, gw);
                let gb = &mut gl.layers[l].bias;
                for r in 0..rows {
                    for (b, v) in gb.iter_mut().zip(g.row(r)) {
                        *b += v;
                    }
                }
            }
            let mut dx = Matrix::zeros(rows, layer.inputs);
            gemm_acc(rows, layer.inputs, layer.outputs, &g.data, &layer.weights, &mut dx.data);
            g = dx;
        }
        Ok((grads, g))
    }
}

fn layer_forward<R: Rng + ?Sized>(layer: &Layer, x: &Matrix, mode: Mode, rng: &mut R) -> LayerTrace {
    let rows = x.rows;
    let mut h = Matrix::zeros(rows, layer.outputs);
    for r in 0..rows {
        h.row_mut(r).copy_from_slice(&layer.bias);
    }
    if rows < 4 {
        for r in 0..rows {
            let xr = x.row(r);
            let hr = h.row_mut(r);
            for (o, hv) in hr.iter_mut().enumerate() {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *hv += dot(w, xr);
            }
        }
    } else {
        let wt = transpose(&layer.weights, layer.outputs, layer.inputs);
        gemm_acc(rows, layer.outputs, layer.inputs, &x.data, &wt, &mut h.data);
    }

    let mask = if mode == Mode::Train && layer.dropout > 0.0 {
        let keep = 1.0 - layer.dropout;
        let scale = 1.0 / keep;
        let mask: Vec<f64> =
            (0..h.data.len()).map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 }).collect();
        for (v, m) in h.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    } else {
        None
    };

    let mut inv_std = Vec::new();
    let normalized = layer.norm.as_ref().map(|norm| {
        let width = layer.outputs as f64;
        let mut xhat = Matrix::zeros(rows, layer.outputs);
        inv_std.reserve(rows);
        for r in 0..rows {
            let hr = h.row_mut(r);
            let mean = hr.iter().sum::<f64>() / width;
            let var = hr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std.push(is);
            let xr = xhat.row_mut(r);
            for j in 0..hr.len() {
                xr[j] = (hr[j] - mean) * is;
                hr[j] = norm.gain[j] * xr[j] + norm.shift[j];
            }
        }
        xhat
    });

    if layer.activation != Activation::Identity {
        for v in &mut h.data {
            *v = layer.activation.apply(*v);
        }
    }
    LayerTrace { mask, normalized, inv_std, output: h }
}

/// Dot product with four independent partial sums in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Stands in for an rng where none may be drawn.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward never samples")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward never samples")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval-mode forward never samples")
    }
}
