//! Conditional noise predictor with classifier-free guidance.
//!
//! The network sees `[z_t ; time features ; c]`, where the time features are
//! sines and cosines of `t / T_train` at [`TIME_FREQUENCIES`] frequencies and
//! `c` is a concept embedding (or the all-zero null condition).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};
use crate::numerics::linalg::{mean_of, norm};
use crate::numerics::{Activation, DenoiserParams, Gradients, Layer, Matrix, Rng, Tape};

pub const TIME_FREQUENCIES: usize = 8;
pub const TIME_FEATURES: usize = 2 * TIME_FREQUENCIES;
pub const CHECKPOINT_MAGIC: &str = "SAGE-CKPT-1";

/// Unit-norm stand-in for a text-prompt embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConceptEmbedding(Vec<f64>);

impl ConceptEmbedding {
    pub const NORM_TOLERANCE: f64 = 1e-9;

    /// Accepts a vector that already has unit norm.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = norm(&values);
        if !n.is_finite() || (n - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(SageError::Shape(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(values))
    }

    /// Scales a nonzero vector onto the unit sphere.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let n = norm(&values);
        if n == 0.0 || !n.is_finite() {
            return Err(SageError::ZeroVector);
        }
        Ok(Self(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ConceptEmbedding {
    type Error = SageError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ConceptEmbedding::new(v)
    }
}

impl From<ConceptEmbedding> for Vec<f64> {
    fn from(c: ConceptEmbedding) -> Self {
        c.0
    }
}

impl AsRef<[f64]> for ConceptEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Plain arithmetic mean of the member embeddings; not renormalized.
pub fn centroid<E: AsRef<[f64]>>(embeddings: &[E]) -> Vec<f64> {
    assert!(!embeddings.is_empty(), "centroid of an empty group");
    mean_of(embeddings)
}

/// Guidance scale as a function of the timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Guidance {
    Constant(f64),
    /// `(t_from, omega)` pairs; the first entry with `t >= t_from` wins.
    /// Entries are kept sorted by descending `t_from`.
    Piecewise(Vec<(usize, f64)>),
}

impl Guidance {
    pub fn piecewise(mut table: Vec<(usize, f64)>) -> Result<Self> {
        if table.is_empty() || table.iter().any(|&(_, w)| !(w >= 0.0)) {
            return Err(SageError::Config("guidance table needs non-negative entries".into()));
        }
        table.sort_by(|a, b| b.0.cmp(&a.0));
        Ok(Guidance::Piecewise(table))
    }

    pub fn at(&self, t: usize) -> f64 {
        match self {
            Guidance::Constant(w) => *w,
            Guidance::Piecewise(table) => table
                .iter()
                .find(|&&(from, _)| t >= from)
                .or(table.last())
                .map(|&(_, w)| w)
                .unwrap_or(1.0),
        }
    }
}

impl From<f64> for Guidance {
    fn from(w: f64) -> Self {
        Guidance::Constant(w)
    }
}

/// Anything that predicts the injected noise from `(z_t, t, c)`.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn predict(&self, z_t: &[f64], t: usize, c: &[f64]) -> Vec<f64>;

    fn null_condition(&self) -> Vec<f64> {
        vec![0.0; self.embed_dim()]
    }

    /// `eps(null) + omega * (eps(c) - eps(null))`, with `omega = 1` returning
    /// the conditional prediction bit-for-bit.
    fn predict_cfg(&self, z_t: &[f64], t: usize, c: &[f64], omega: f64) -> Vec<f64> {
        assert!(omega >= 0.0, "guidance scale must be non-negative");
        if omega == 1.0 {
            return self.predict(z_t, t, c);
        }
        let uncond = self.predict(z_t, t, &self.null_condition());
        if omega == 0.0 {
            return uncond;
        }
        let cond = self.predict(z_t, t, c);
        uncond
            .iter()
            .zip(&cond)
            .map(|(u, k)| u + omega * (k - u))
            .collect()
    }
}

/// Sinusoidal features of `t / t_train`: `sin(f_k u), cos(f_k u)` with
/// `f_k = (pi / 2) * 2^(k / 2)`.
pub fn time_features(t: usize, t_train: usize) -> [f64; TIME_FEATURES] {
    let u = t as f64 / t_train as f64;
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FREQUENCIES {
        let f = std::f64::consts::FRAC_PI_2 * 2f64.powf(k as f64 / 2.0);
        out[2 * k] = (f * u).sin();
        out[2 * k + 1] = (f * u).cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub params: DenoiserParams,
    data_dim: usize,
    embed_dim: usize,
    t_train: usize,
}

impl Denoiser {
    pub fn input_width(data_dim: usize, embed_dim: usize) -> usize {
        data_dim + TIME_FEATURES + embed_dim
    }

    pub fn new(params: DenoiserParams, data_dim: usize, embed_dim: usize, t_train: usize) -> Result<Self> {
        if params.input_width() != Self::input_width(data_dim, embed_dim) {
            return Err(SageError::Shape(format!(
                "network input width {} != {} (data {data_dim} + time {TIME_FEATURES} + embed {embed_dim})",
                params.input_width(),
                Self::input_width(data_dim, embed_dim)
            )));
        }
        if params.output_width() != data_dim {
            return Err(SageError::Shape(format!(
                "network output width {} != data dim {data_dim}",
                params.output_width()
            )));
        }
        Ok(Self {
            params,
            data_dim,
            embed_dim,
            t_train,
        })
    }

    /// Freshly initialized network with the given hidden widths.
    pub fn init(
        data_dim: usize,
        embed_dim: usize,
        hidden: &[usize],
        t_train: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![Self::input_width(data_dim, embed_dim)];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let params = DenoiserParams::init(&widths, activation, rng);
        Self::new(params, data_dim, embed_dim, t_train).expect("widths built to match")
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    fn assemble(&self, z_t: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        assert_eq!(z_t.len(), self.data_dim, "latent has wrong dimension");
        assert_eq!(c.len(), self.embed_dim, "condition has wrong dimension");
        let mut input = Vec::with_capacity(self.params.input_width());
        input.extend_from_slice(z_t);
        input.extend_from_slice(&time_features(t, self.t_train));
        input.extend_from_slice(c);
        input
    }

    /// Prediction plus the tape needed for [`Denoiser::backward_into`].
    pub fn forward(&self, z_t: &[f64], t: usize, c: &[f64]) -> (Vec<f64>, Tape) {
        self.params.forward(&self.assemble(z_t, t, c))
    }

    pub fn backward_into(&self, tape: &Tape, output_grad: &[f64], scale: f64, grads: &mut Gradients) {
        self.params.backward_into(tape, output_grad, scale, grads);
    }

    /// Upper bound on `|predict(z, t, c)|` from operator norms, using
    /// `|act(x)| <= |x|` for the smooth activations in use.
    pub fn output_bound(&self, z_t: &[f64], t: usize, c: &[f64]) -> f64 {
        let mut bound = norm(&self.assemble(z_t, t, c));
        for layer in &self.params.layers {
            bound = layer.weight.spectral_norm() * bound + norm(&layer.bias);
        }
        bound
    }
}

impl NoisePredictor for Denoiser {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn predict(&self, z_t: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        self.params.eval(&self.assemble(z_t, t, c))
    }
}

fn push_floats(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        // Shortest representation that parses back to the same bits.
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

/// Text checkpoint: magic line, header fields, then one `w` and one `b` line
/// per layer.
pub fn checkpoint_to_string(denoiser: &Denoiser, config_hash: &str) -> String {
    let p = &denoiser.params;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "config_hash {config_hash}");
    let _ = writeln!(out, "t_train {}", denoiser.t_train);
    let _ = writeln!(out, "data_dim {}", denoiser.data_dim);
    let _ = writeln!(out, "embed_dim {}", denoiser.embed_dim);
    let _ = writeln!(out, "activation {}", p.activation.name());
    let widths: Vec<String> = p.widths().iter().map(|w| w.to_string()).collect();
    let _ = writeln!(out, "widths {}", widths.join(" "));
    for layer in &p.layers {
        push_floats(&mut out, "w", layer.weight.as_slice());
        push_floats(&mut out, "b", &layer.bias);
    }
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<(Denoiser, String)> {
    let bad = |d: &str| SageError::format("checkpoint", d.to_string());
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing SAGE-CKPT-1 magic line"));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected field '{name}'")))
    };
    let hash = field("config_hash")?;
    let parse_usize = |s: String| s.trim().parse::<usize>().map_err(|e| bad(&e.to_string()));
    let t_train = parse_usize(field("t_train")?)?;
    let data_dim = parse_usize(field("data_dim")?)?;
    let embed_dim = parse_usize(field("embed_dim")?)?;
    let act_name = field("activation")?;
    let activation = Activation::from_name(act_name.trim()).ok_or_else(|| bad("unknown activation"))?;
    let widths = field("widths")?
        .split_whitespace()
        .map(|w| w.parse::<usize>().map_err(|e| bad(&e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if widths.len() < 2 {
        return Err(bad("need at least two widths"));
    }
    let mut floats = |tag: &str, expected: usize| -> Result<Vec<f64>> {
        let line = lines.next().ok_or_else(|| bad("truncated layer data"))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(bad(&format!("expected '{tag}' line")));
        }
        let vals = parts
            .map(|v| v.parse::<f64>().map_err(|e| bad(&e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(bad(&format!("'{tag}' line has {} values, expected {expected}", vals.len())));
        }
        Ok(vals)
    };
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let weight = Matrix::from_vec(w[1], w[0], floats("w", w[0] * w[1])?)?;
        let bias = floats("b", w[1])?;
        layers.push(Layer { weight, bias });
    }
    let params = DenoiserParams::new(layers, activation)?;
    Ok((Denoiser::new(params, data_dim, embed_dim, t_train)?, hash))
}

pub fn save_checkpoint(path: &Path, denoiser: &Denoiser, config_hash: &str) -> Result<()> {
    fs::write(path, checkpoint_to_string(denoiser, config_hash)).map_err(|e| SageError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Denoiser, String)> {
    let text = fs::read_to_string(path).map_err(|e| SageError::io(path, e))?;
    checkpoint_from_str(&text)
}
