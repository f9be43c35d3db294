//! Variance-preserving noise schedule, forward noising and the deterministic
//! DDIM update.
//!
//! Timesteps are integers `0..=T_train`. Signal and noise scales satisfy
//! `alpha_t^2 + sigma_t^2 = 1`, with `alpha_0 = 1` and `sigma_0 = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};

/// Signal power `alpha_T^2` left at the terminal training timestep.
pub const TERMINAL_SIGNAL: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `alpha_t^2` decreases linearly in `t`.
    Linear,
    /// `alpha_t = cos(theta_max * t / T)`.
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = SageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(SageError::Config(format!("unknown schedule kind '{other}'"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_train: usize,
    kind: ScheduleKind,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(t_train: usize, kind: ScheduleKind) -> Result<Self> {
        if t_train < 2 {
            return Err(SageError::Config(format!("T_train must be at least 2, got {t_train}")));
        }
        let theta_max = TERMINAL_SIGNAL.sqrt().acos();
        let signal_power: Vec<f64> = (0..=t_train)
            .map(|t| {
                let u = t as f64 / t_train as f64;
                match kind {
                    ScheduleKind::Linear => 1.0 - (1.0 - TERMINAL_SIGNAL) * u,
                    ScheduleKind::Cosine => (theta_max * u).cos().powi(2),
                }
            })
            .collect();
        let alpha = signal_power.iter().map(|p| p.sqrt()).collect();
        let sigma = signal_power.iter().map(|p| (1.0 - p).max(0.0).sqrt()).collect();
        Ok(Self {
            t_train,
            kind,
            alpha,
            sigma,
        })
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// `alpha_t * z0 + sigma_t * eps`.
    pub fn forward_sample(&self, z0: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        assert_eq!(z0.len(), eps.len(), "latent and noise lengths differ");
        let (a, s) = (self.alpha[t], self.sigma[t]);
        z0.iter().zip(eps).map(|(z, e)| a * z + s * e).collect()
    }

    /// Deterministic DDIM update from `t` to `t_prev`.
    pub fn ddim_step(&self, z_t: &[f64], eps_hat: &[f64], t: usize, t_prev: usize) -> Result<Vec<f64>> {
        if t <= t_prev || t > self.t_train {
            return Err(SageError::Config(format!("ddim step needs t > t_prev, got {t} -> {t_prev}")));
        }
        if z_t.len() != eps_hat.len() {
            return Err(SageError::Shape("latent and noise prediction lengths differ".into()));
        }
        let a_t = self.alpha[t];
        if a_t == 0.0 {
            return Err(SageError::Singular { t });
        }
        let (s_t, a_prev, s_prev) = (self.sigma[t], self.alpha[t_prev], self.sigma[t_prev]);
        Ok(z_t
            .iter()
            .zip(eps_hat)
            .map(|(z, e)| {
                let x0 = (z - s_t * e) / a_t;
                a_prev * x0 + s_prev * e
            })
            .collect())
    }
}

pub fn build_schedule(t_train: usize, kind: &str) -> Result<NoiseSchedule> {
    NoiseSchedule::new(t_train, kind.parse()?)
}

/// `floor(x + 1/2)` with a little slack for representation error at ties.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Inference timesteps plus the branch point.
///
/// `steps` runs from high noise to low noise. The first
/// `len - branch_index` positions form the shared phase and the remaining
/// `branch_index` positions form the branch phase; the step taken from
/// `steps[i]` lands on `steps[i + 1]`, or on 0 after the last entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingGrid {
    steps: Vec<usize>,
    branch_index: usize,
}

impl SamplingGrid {
    pub fn new(steps: Vec<usize>, branch_index: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(SageError::Config("sampling grid is empty".into()));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) || *steps.last().unwrap() == 0 {
            return Err(SageError::Config("grid must be strictly decreasing and end above 0".into()));
        }
        if branch_index > steps.len() {
            return Err(SageError::Config(format!(
                "branch index {branch_index} exceeds grid length {}",
                steps.len()
            )));
        }
        Ok(Self { steps, branch_index })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn branch_index(&self) -> usize {
        self.branch_index
    }

    pub fn shared_steps(&self) -> usize {
        self.steps.len() - self.branch_index
    }

    /// `(len - branch_index) / len`
    pub fn beta(&self) -> f64 {
        self.shared_steps() as f64 / self.len() as f64
    }

    /// Target timestep of the update taken at position `i`.
    pub fn prev(&self, i: usize) -> usize {
        self.steps.get(i + 1).copied().unwrap_or(0)
    }

    /// Same timesteps, different branch point.
    pub fn with_shared_steps(&self, shared: usize) -> Result<Self> {
        if shared > self.len() {
            return Err(SageError::Config(format!(
                "{shared} shared steps exceed grid length {}",
                self.len()
            )));
        }
        Self::new(self.steps.clone(), self.len() - shared)
    }

    /// `(position, t, t_prev)` for the shared phase.
    pub fn shared_positions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.shared_steps()).map(move |i| (i, self.steps[i], self.prev(i)))
    }

    /// `(position, t, t_prev)` for the branch phase.
    pub fn branch_positions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (self.shared_steps()..self.len()).map(move |i| (i, self.steps[i], self.prev(i)))
    }

    pub fn all_positions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).map(move |i| (i, self.steps[i], self.prev(i)))
    }
}

/// Uniform-stride grid of `n_steps` timesteps with `round(beta * n_steps)`
/// shared positions.
pub fn build_grid(schedule: &NoiseSchedule, n_steps: usize, beta: f64) -> Result<SamplingGrid> {
    let t_train = schedule.t_train();
    if n_steps == 0 || n_steps > t_train {
        return Err(SageError::Config(format!(
            "n_steps must lie in 1..={t_train}, got {n_steps}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(SageError::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let steps = (0..n_steps)
        .map(|i| (t_train * (n_steps - i) + n_steps / 2) / n_steps)
        .collect();
    let shared = round_half_up(beta * n_steps as f64).min(n_steps);
    SamplingGrid::new(steps, n_steps - shared)
}
