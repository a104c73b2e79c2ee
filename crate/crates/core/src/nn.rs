//! Dense layers with hand-written reverse-mode gradients, plus Adam and EMA.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_len("dense bias", weights.rows(), bias.len())?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in layer.weights.as_mut_slice() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(input)?;
        for (v, b) in z.iter_mut().zip(&self.bias) {
            *v = self.activation.apply(*v + b);
        }
        Ok(z)
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<DenseGrads> {
        let output = self.forward(input)?;
        self.backward_with_output(input, &output, upstream)
    }

    /// Backward pass reusing a forward output computed by the caller.
    pub fn backward_with_output(&self, input: &[f64], output: &[f64], upstream: &[f64]) -> Result<DenseGrads> {
        check_len("dense upstream gradient", self.outputs(), upstream.len())?;
        check_len("dense output", self.outputs(), output.len())?;
        let delta: Vec<f64> = upstream
            .iter()
            .zip(output)
            .map(|(g, y)| g * self.activation.derivative_from_output(*y))
            .collect();
        Ok(DenseGrads {
            weights: Matrix::outer(&delta, input),
            input: self.weights.matvec_transposed(&delta)?,
            bias: delta,
        })
    }

    /// Weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.as_slice().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_len("dense parameters", self.param_count(), p.len())?;
        let nw = self.weights.as_slice().len();
        self.weights.as_mut_slice().copy_from_slice(&p[..nw]);
        self.bias.copy_from_slice(&p[nw..]);
        Ok(())
    }
}

impl DenseGrads {
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.weights.as_slice().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            check_len("layer input", pair[0].outputs(), pair[1].inputs())?;
        }
        Ok(Self { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |x, layer| layer.forward(&x))
    }

    /// Activations at every layer boundary, input first.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut trace = vec![input.to_vec()];
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Returns (flat parameter gradient, input gradient).
    pub fn backward(&self, trace: &[Vec<f64>], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("mlp trace", self.layers.len() + 1, trace.len())?;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lg = layer.backward_with_output(&trace[i], &trace[i + 1], &g)?;
            grads.push(lg.flat_params());
            g = lg.input;
        }
        grads.reverse();
        Ok((grads.concat(), g))
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(DenseLayer::params).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_len("mlp parameters", self.param_count(), p.len())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.set_params(&p[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected Adam step applied to `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradients", self.m.len(), grads.len())?;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub const EMA_MAX_DECAY: f64 = 0.999;

/// Step-dependent EMA decay `min(0.999, (1 + step) / (10 + step))`.
pub fn ema_decay(step: u64) -> f64 {
    let s = step as f64;
    ((1.0 + s) / (10.0 + s)).min(EMA_MAX_DECAY)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: Vec<f64>,
    pub step: u64,
}

impl EmaState {
    pub fn new(params: &[f64]) -> Self {
        Self {
            shadow: params.to_vec(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &[f64]) -> Result<()> {
        check_len("ema parameters", self.shadow.len(), params.len())?;
        let d = ema_decay(self.step);
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
        self.step += 1;
        Ok(())
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", values[i]))),
    }
}
