//! Fully connected network with hand-written reverse mode.
//!
//! Hidden layers apply the activation; the output layer is affine.

use serde::{Deserialize, Serialize};

use super::linalg::{all_finite, Matrix};
use super::rng::Rng;
use crate::error::{Result, SageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x * sigmoid(x)`
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "silu" => Some(Activation::Silu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Parameter gradients share the parameter layout.
pub type Gradients = DenoiserParams;

/// Activations recorded by [`DenoiserParams::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl DenoiserParams {
    /// Checks that layer shapes compose and every entry is finite.
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(SageError::Shape("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(SageError::Shape(format!(
                    "layer {i}: bias length {} != rows {}",
                    layer.bias.len(),
                    layer.weight.rows()
                )));
            }
            if i > 0 && layers[i - 1].weight.rows() != layer.weight.cols() {
                return Err(SageError::Shape(format!(
                    "layer {i}: expects {} inputs, previous layer gives {}",
                    layer.weight.cols(),
                    layers[i - 1].weight.rows()
                )));
            }
        }
        let params = Self { layers, activation };
        if !params.is_finite() {
            return Err(SageError::NonFinite("network parameters".into()));
        }
        Ok(params)
    }

    /// LeCun-normal weights, zero biases. `widths` lists every layer width
    /// including input and output.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let data = rng
                    .gaussian(fan_in * fan_out)
                    .into_iter()
                    .map(|x| x * scale)
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("finite init"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.weight.rows()).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.weight.rows()));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters in canonical order: per layer, weights row-major then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        let mut i = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&values[i..i + w.len()]);
            i += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&values[i..i + n]);
            i += n;
        }
    }

    /// Mutable slices over all parameter storage, in canonical order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| all_finite(s))
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, Tape) {
        assert_eq!(
            input.len(),
            self.input_width(),
            "network input has wrong width"
        );
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.weight.matvec(&x);
            for (hj, b) in h.iter_mut().zip(&layer.bias) {
                *hj += b;
            }
            inputs.push(x);
            if i == last {
                x = h;
            } else {
                x = h.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(h);
            }
        }
        (x, Tape { inputs, pre })
    }

    /// Forward pass without keeping the tape.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).0
    }

    /// Exact gradient of `<output_grad, output>` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Gradients {
        let mut grads = self.zeros_like();
        self.backward_into(tape, output_grad, 1.0, &mut grads);
        grads
    }

    /// Adds `scale` times the gradient into `grads`.
    pub fn backward_into(&self, tape: &Tape, output_grad: &[f64], scale: f64, grads: &mut Gradients) {
        assert_eq!(output_grad.len(), self.output_width());
        assert_eq!(tape.inputs.len(), self.layers.len(), "tape from another network");
        let mut delta = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            g.weight.add_outer(scale, &delta, &tape.inputs[i]);
            for (gb, d) in g.bias.iter_mut().zip(&delta) {
                *gb += scale * d;
            }
            if i > 0 {
                let upstream = layer.weight.tr_matvec(&delta);
                delta = upstream
                    .iter()
                    .zip(&tape.pre[i - 1])
                    .map(|(u, &h)| u * self.activation.derivative(h))
                    .collect();
            }
        }
    }
}
