//! AdamW: Adam with decoupled weight decay.
//!
//! ```text
//! θ ← θ − lr·λ·θ
//! m ← β₁m + (1−β₁)g,   v ← β₂v + (1−β₂)g²
//! θ ← θ − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
//! ```

use serde::{Deserialize, Serialize};

use super::mlp::{DenoiserParams, Gradients};
use crate::error::{Result, SageError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamWState {
    pub fn new(num_params: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_params(params: &DenoiserParams) -> Self {
        Self::new(params.num_params(), AdamWConfig::default())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of a flat parameter vector. Rejects non-finite gradients
    /// without touching the parameters or the moments.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SageError::Shape(format!(
                "optimizer tracks {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(SageError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(SageError::NonFinite(format!("gradient component {i}")));
        }
        let AdamWConfig { beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *p -= lr * weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
        }
        Ok(())
    }
}

/// AdamW step on network parameters.
pub fn adamw_step(
    params: &mut DenoiserParams,
    grads: &Gradients,
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut flat = params.flat();
    state.update(&mut flat, &grads.flat(), lr, weight_decay)?;
    if flat.iter().any(|p| !p.is_finite()) {
        return Err(SageError::NonFinite("parameters after optimizer step".into()));
    }
    params.set_flat(&flat);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut state = AdamWState::new(3, AdamWConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        state.update(&mut p, &[0.0; 3], 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut state = AdamWState::new(1, AdamWConfig::default());
        let mut w = [1.0];
        let g = [2.0 * w[0]];
        state.update(&mut w, &g, 0.1, 0.0).unwrap();
        assert!(w[0] < 1.0 && w[0] > 0.0);
    }

    #[test]
    fn converges_on_two_dimensional_quadratic() {
        // f(w) = (w0 - 1)^2 + 10 (w1 + 2)^2
        let f = |w: &[f64]| (w[0] - 1.0).powi(2) + 10.0 * (w[1] + 2.0).powi(2);
        let mut state = AdamWState::new(2, AdamWConfig::default());
        let mut w = [0.0, 0.0];
        for _ in 0..500 {
            let g = [2.0 * (w[0] - 1.0), 20.0 * (w[1] + 2.0)];
            state.update(&mut w, &g, 0.05, 0.0).unwrap();
        }
        assert!(f(&w) < 1e-6, "loss {}", f(&w));
    }

    #[test]
    fn monotone_on_unit_quadratic_for_small_lr() {
        let f = |w: &[f64]| 0.5 * w.iter().map(|x| x * x).sum::<f64>();
        for lr in [1e-2, 5e-3, 1e-3] {
            let mut state = AdamWState::new(2, AdamWConfig::default());
            let mut w = [1.0, -0.5];
            let mut prev = f(&w);
            for _ in 0..40 {
                let g = w;
                state.update(&mut w, &g, lr, 0.0).unwrap();
                let cur = f(&w);
                assert!(cur <= prev, "lr {lr}: {cur} > {prev}");
                prev = cur;
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut state = AdamWState::new(2, AdamWConfig::default());
        let mut p = vec![1.0, 2.0];
        assert!(state.update(&mut p, &[f64::NAN, 0.0], 0.1, 0.0).is_err());
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut state = AdamWState::new(1, AdamWConfig::default());
        let mut p = [2.0];
        state.update(&mut p, &[0.0], 0.1, 0.5).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
