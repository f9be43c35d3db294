//! Central-difference gradient checking.

use super::mlp::{DenoiserParams, Gradients};

/// Relative errors are measured against `max(|analytic|, |numeric|, ABS_FLOOR)`
/// so that components which are zero on both sides do not blow up the ratio.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference_flat(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn central_difference(
    loss: &dyn Fn(&DenoiserParams) -> f64,
    params: &DenoiserParams,
    step: f64,
) -> Vec<f64> {
    let f = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat);
        loss(&p)
    };
    central_difference_flat(&f, &params.flat(), step)
}

pub fn check_flat(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len());
    let numeric = central_difference_flat(f, x, step);
    summarize(analytic, &numeric, tolerance)
}

/// Compare analytic parameter gradients of `loss` against central differences.
pub fn finite_diff_check(
    loss: &dyn Fn(&DenoiserParams) -> f64,
    params: &DenoiserParams,
    analytic: &Gradients,
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let numeric = central_difference(loss, params, step);
    summarize(&analytic.flat(), &numeric, tolerance)
}

fn summarize(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        max_rel_error,
        worst_index,
        checked: analytic.len(),
        tolerance,
    }
}
