//! Noise-prediction losses and the group training loop.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::data::GroupedDataset;
use crate::error::{Result, SageError};
use crate::model::{Denoiser, NoisePredictor};
use crate::numerics::linalg::{mean_of, sq_dist};
use crate::numerics::{AdamWConfig, AdamWState, Gradients, Rng};
use crate::schedule::{round_half_up, NoiseSchedule};

/// Per-timestep loss weight `w_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeWeight {
    One,
    /// `min(snr_t, gamma) / snr_t`, i.e. min-SNR weighting for eps targets.
    MinSnr(f64),
}

impl TimeWeight {
    pub fn at(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            TimeWeight::One => 1.0,
            TimeWeight::MinSnr(gamma) => {
                let snr = (schedule.alpha(t) / schedule.sigma(t)).powi(2);
                snr.min(gamma) / snr
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Ldm,
    Sage,
}

impl FromStr for LossMode {
    type Err = SageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldm" => Ok(LossMode::Ldm),
            "sage" => Ok(LossMode::Sage),
            other => Err(SageError::Config(format!("unknown loss '{other}' (expected ldm or sage)"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ldm => "ldm",
            LossMode::Sage => "sage",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageLossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub weight: TimeWeight,
    /// Training branch point; shared timesteps lie in `[t_star, T]`.
    pub t_star: usize,
    pub cfg_dropout: f64,
    /// Let gradients flow through the averaged per-prompt prediction.
    pub soft_target_grad: bool,
}

impl SageLossConfig {
    /// Defaults with `t_star = round((1 - beta) * t_train)`.
    pub fn for_beta(beta: f64, t_train: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(SageError::Config(format!("sharing ratio {beta} outside [0, 1]")));
        }
        let t_star = round_half_up((1.0 - beta) * t_train as f64).clamp(1, t_train);
        Ok(Self {
            lambda1: 1.0,
            lambda2: 1.0,
            weight: TimeWeight::One,
            t_star,
            cfg_dropout: 0.1,
            soft_target_grad: false,
        })
    }

    pub fn validate(&self, t_train: usize) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(SageError::Config("loss weights must be non-negative".into()));
        }
        if !(1..=t_train).contains(&self.t_star) {
            return Err(SageError::Config(format!("T*_train = {} outside [1, {t_train}]", self.t_star)));
        }
        if !(0.0..1.0).contains(&self.cfg_dropout) {
            return Err(SageError::Config(format!("dropout {} outside [0, 1)", self.cfg_dropout)));
        }
        Ok(())
    }
}

/// Members of one prompt group; the shared representations are always
/// recomputed from the members.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGroup {
    z: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl TrainingGroup {
    pub fn new(z: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> Result<Self> {
        if z.is_empty() || z.len() != c.len() {
            return Err(SageError::Shape(format!(
                "group needs matching non-empty latents and conditions, got {} and {}",
                z.len(),
                c.len()
            )));
        }
        Ok(Self { z, c })
    }

    pub fn from_dataset(dataset: &GroupedDataset, members: &[usize]) -> Result<Self> {
        let pick = |i: &usize| {
            dataset
                .records
                .get(*i)
                .ok_or_else(|| SageError::Shape(format!("record {i} not in dataset")))
        };
        let recs = members.iter().map(pick).collect::<Result<Vec<_>>>()?;
        Self::new(
            recs.iter().map(|r| r.x.clone()).collect(),
            recs.iter().map(|r| r.embedding.as_slice().to_vec()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn latents(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn conditions(&self) -> &[Vec<f64>] {
        &self.c
    }

    pub fn z_bar(&self) -> Vec<f64> {
        mean_of(&self.z)
    }

    pub fn c_bar(&self) -> Vec<f64> {
        mean_of(&self.c)
    }
}

/// The three hybrid-loss terms (already weighted) and their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub shared: f64,
    pub soft: f64,
    pub branch: f64,
    pub total: f64,
}

impl LossTerms {
    fn add_scaled(&mut self, other: &LossTerms, s: f64) {
        self.shared += s * other.shared;
        self.soft += s * other.soft;
        self.branch += s * other.branch;
        self.total += s * other.total;
    }
}

fn residual_grad(pred: &[f64], target: &[f64], factor: f64) -> Vec<f64> {
    pred.iter().zip(target).map(|(p, t)| factor * (p - t)).collect()
}

/// `w_t * |eps_theta(alpha_t z + sigma_t eps, c) - eps|^2` and its gradient.
pub fn loss_ldm(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    z: &[f64],
    c: &[f64],
    eps: &[f64],
    t: usize,
    weight: TimeWeight,
) -> (f64, Gradients) {
    let mut grads = denoiser.params.zeros_like();
    let loss = ldm_into(denoiser, schedule, z, c, eps, t, weight, 1.0, &mut grads);
    (loss, grads)
}

#[allow(clippy::too_many_arguments)]
fn ldm_into(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    z: &[f64],
    c: &[f64],
    eps: &[f64],
    t: usize,
    weight: TimeWeight,
    scale: f64,
    grads: &mut Gradients,
) -> f64 {
    let w = weight.at(schedule, t);
    let (pred, tape) = denoiser.forward(&schedule.forward_sample(z, eps, t), t, c);
    denoiser.backward_into(&tape, &residual_grad(&pred, eps, 2.0 * w), scale, grads);
    w * sq_dist(&pred, eps)
}

/// Conditions after classifier-free dropout.
struct Conditions<'a> {
    shared: &'a [f64],
    soft: Vec<&'a [f64]>,
    branch: Vec<&'a [f64]>,
}

#[allow(clippy::too_many_arguments)]
fn sage_into(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    group: &TrainingGroup,
    conds: &Conditions<'_>,
    eps: &[f64],
    t_s: usize,
    t_b: usize,
    config: &SageLossConfig,
    scale: f64,
    grads: &mut Gradients,
) -> LossTerms {
    let n = group.len() as f64;
    let z_bar = group.z_bar();

    let (shared_pred, shared_tape) = denoiser.forward(&schedule.forward_sample(&z_bar, eps, t_s), t_s, conds.shared);
    let soft_evals: Vec<_> = group
        .z
        .iter()
        .zip(&conds.soft)
        .map(|(z, c)| denoiser.forward(&schedule.forward_sample(z, eps, t_s), t_s, c))
        .collect();
    let soft_target = mean_of(&soft_evals.iter().map(|(p, _)| p.as_slice()).collect::<Vec<_>>());

    let w_s = config.weight.at(schedule, t_s);
    let shared = config.lambda1 * w_s * sq_dist(&shared_pred, eps);
    let soft = config.lambda2 * sq_dist(&shared_pred, &soft_target);

    let mut g_shared = residual_grad(&shared_pred, eps, 2.0 * config.lambda1 * w_s);
    let g_soft = residual_grad(&shared_pred, &soft_target, 2.0 * config.lambda2);
    g_shared.iter_mut().zip(&g_soft).for_each(|(a, b)| *a += b);
    denoiser.backward_into(&shared_tape, &g_shared, scale, grads);
    if config.soft_target_grad && config.lambda2 > 0.0 {
        for (_, tape) in &soft_evals {
            denoiser.backward_into(tape, &g_soft, -scale / n, grads);
        }
    }

    let mut branch = 0.0;
    for (z, c) in group.z.iter().zip(&conds.branch) {
        branch += ldm_into(denoiser, schedule, z, c, eps, t_b, config.weight, scale / n, grads) / n;
    }

    LossTerms {
        shared,
        soft,
        branch,
        total: shared + soft + branch,
    }
}

/// Hybrid loss on one group with a single shared noise vector.
pub fn loss_sage(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    group: &TrainingGroup,
    eps: &[f64],
    t_s: usize,
    t_b: usize,
    config: &SageLossConfig,
) -> (LossTerms, Gradients) {
    assert!(!group.is_empty(), "empty group");
    let c_bar = group.c_bar();
    let conds = Conditions {
        shared: &c_bar,
        soft: group.c.iter().map(Vec::as_slice).collect(),
        branch: group.c.iter().map(Vec::as_slice).collect(),
    };
    let mut grads = denoiser.params.zeros_like();
    let terms = sage_into(denoiser, schedule, group, &conds, eps, t_s, t_b, config, 1.0, &mut grads);
    (terms, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub loss: SageLossConfig,
    pub batch_groups: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam: AdamWConfig,
}

impl TrainConfig {
    pub fn new(mode: LossMode, loss: SageLossConfig) -> Self {
        Self {
            mode,
            loss,
            batch_groups: 4,
            lr: 1e-4,
            weight_decay: 0.0,
            adam: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<LossRow>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,term1,term2,term3,total\n");
        for r in &self.rows {
            let t = r.terms;
            out.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", r.step, t.shared, t.soft, t.branch, t.total));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| SageError::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| SageError::io(path, e))
    }

    /// Mean total over the last `k` recorded steps.
    pub fn tail_mean(&self, k: usize) -> Option<f64> {
        let k = k.min(self.rows.len());
        (k > 0).then(|| self.rows[self.rows.len() - k..].iter().map(|r| r.terms.total).sum::<f64>() / k as f64)
    }
}

/// Optimizer state plus the data and configuration of one run.
pub struct Trainer<'a> {
    pub denoiser: Denoiser,
    schedule: &'a NoiseSchedule,
    groups: Vec<TrainingGroup>,
    config: TrainConfig,
    state: AdamWState,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(denoiser: Denoiser, schedule: &'a NoiseSchedule, dataset: &GroupedDataset, config: TrainConfig) -> Result<Self> {
        let groups = dataset
            .groups
            .iter()
            .map(|g| TrainingGroup::from_dataset(dataset, g))
            .collect::<Result<Vec<_>>>()?;
        Self::from_groups(denoiser, schedule, groups, config)
    }

    pub fn from_groups(
        denoiser: Denoiser,
        schedule: &'a NoiseSchedule,
        groups: Vec<TrainingGroup>,
        config: TrainConfig,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(SageError::Config("training needs at least one group".into()));
        }
        if denoiser.t_train() != schedule.t_train() {
            return Err(SageError::Config(format!(
                "denoiser trained for T = {} but schedule has T = {}",
                denoiser.t_train(),
                schedule.t_train()
            )));
        }
        config.loss.validate(schedule.t_train())?;
        if config.batch_groups == 0 || !(config.lr > 0.0) || !(config.weight_decay >= 0.0) {
            return Err(SageError::Config("batch size and learning rate must be positive".into()));
        }
        let state = AdamWState::new(denoiser.params.num_params(), config.adam);
        Ok(Self {
            denoiser,
            schedule,
            groups,
            config,
            state,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn drop_cond<'c>(&self, rng: &mut Rng, c: &'c [f64], null: &'c [f64]) -> &'c [f64] {
        if rng.bernoulli(self.config.loss.cfg_dropout) { null } else { c }
    }

    /// Loss and gradient on one freshly drawn batch, averaged over the batch.
    fn batch(&self, rng: &mut Rng) -> (LossTerms, Gradients) {
        let t_train = self.schedule.t_train();
        let t_star = self.config.loss.t_star;
        let null = self.denoiser.null_condition();
        let picks: Vec<usize> = (0..self.config.batch_groups)
            .map(|_| rng.uniform_int(0, self.groups.len() - 1))
            .collect();
        let mut grads = self.denoiser.params.zeros_like();
        let mut terms = LossTerms::default();
        match self.config.mode {
            LossMode::Ldm => {
                let count: usize = picks.iter().map(|&g| self.groups[g].len()).sum();
                let scale = 1.0 / count as f64;
                for &g in &picks {
                    let group = &self.groups[g];
                    for (z, c) in group.z.iter().zip(&group.c) {
                        let t = rng.uniform_int(1, t_train);
                        let eps = rng.gaussian(z.len());
                        let c = self.drop_cond(rng, c, &null);
                        let l = ldm_into(&self.denoiser, self.schedule, z, c, &eps, t, self.config.loss.weight, scale, &mut grads);
                        terms.branch += scale * l;
                    }
                }
                terms.total = terms.branch;
            }
            LossMode::Sage => {
                let scale = 1.0 / picks.len() as f64;
                for &g in &picks {
                    let group = &self.groups[g];
                    let t_s = rng.uniform_int(t_star, t_train);
                    let t_b = rng.uniform_int(1, t_star);
                    let eps = rng.gaussian(self.data_dim());
                    let c_bar = group.c_bar();
                    let shared_dropped = rng.bernoulli(self.config.loss.cfg_dropout);
                    let shared: &[f64] = if shared_dropped { &null } else { &c_bar };
                    // A dropped shared condition drops the soft target with it.
                    let soft = group.c.iter().map(|c| if shared_dropped { &null[..] } else { c.as_slice() }).collect();
                    let branch = group.c.iter().map(|c| self.drop_cond(rng, c, &null)).collect();
                    let conds = Conditions { shared, soft, branch };
                    let l = sage_into(&self.denoiser, self.schedule, group, &conds, &eps, t_s, t_b, &self.config.loss, scale, &mut grads);
                    terms.add_scaled(&l, scale);
                }
            }
        }
        (terms, grads)
    }

    fn data_dim(&self) -> usize {
        self.denoiser.data_dim()
    }

    /// One optimizer step. On a non-finite loss or update the parameters are
    /// left at their last good values.
    pub fn step(&mut self, rng: &mut Rng) -> Result<LossTerms> {
        let (terms, grads) = self.batch(rng);
        if !terms.total.is_finite() || !grads.is_finite() {
            return Err(SageError::NonFinite(format!("loss at step {}", self.step + 1)));
        }
        let mut params = self.denoiser.params.clone();
        crate::numerics::adamw_step(&mut params, &grads, &mut self.state, self.config.lr, self.config.weight_decay)?;
        self.denoiser.params = params;
        self.step += 1;
        Ok(terms)
    }

    /// Mean batch loss over `batches` draws without updating anything.
    pub fn evaluate(&self, rng: &mut Rng, batches: usize) -> f64 {
        (0..batches).map(|_| self.batch(rng).0.total).sum::<f64>() / batches.max(1) as f64
    }
}

/// Training stopped early; `denoiser` holds the last finite parameters.
#[derive(Debug)]
pub struct Diverged {
    pub step: usize,
    pub reason: SageError,
    pub denoiser: Denoiser,
    pub curve: LossCurve,
}

impl fmt::Display for Diverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training diverged at step {}: {}", self.step, self.reason)
    }
}

impl std::error::Error for Diverged {}

/// Runs `steps` optimizer steps, calling `checkpoint` every `every` steps
/// (and never if `every == 0`).
pub fn train(
    trainer: &mut Trainer<'_>,
    steps: usize,
    rng: &mut Rng,
    every: usize,
    mut checkpoint: impl FnMut(usize, &Denoiser) -> Result<()>,
) -> std::result::Result<LossCurve, Box<Diverged>> {
    let mut curve = LossCurve::default();
    for _ in 0..steps {
        match trainer.step(rng) {
            Ok(terms) => curve.rows.push(LossRow {
                step: trainer.steps_taken(),
                terms,
            }),
            Err(reason) => {
                return Err(Box::new(Diverged {
                    step: trainer.steps_taken() + 1,
                    reason,
                    denoiser: trainer.denoiser.clone(),
                    curve,
                }))
            }
        }
        if every > 0 && trainer.steps_taken() % every == 0 {
            if let Err(reason) = checkpoint(trainer.steps_taken(), &trainer.denoiser) {
                return Err(Box::new(Diverged {
                    step: trainer.steps_taken(),
                    reason,
                    denoiser: trainer.denoiser.clone(),
                    curve,
                }));
            }
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Activation};
    use crate::schedule::ScheduleKind;

    fn setup(seed: u64) -> (Denoiser, NoiseSchedule, Rng) {
        let mut rng = Rng::new(seed, 0);
        let d = Denoiser::init(2, 4, &[8], 100, Activation::Tanh, &mut rng);
        (d, NoiseSchedule::new(100, ScheduleKind::Cosine).unwrap(), rng)
    }

    fn random_group(rng: &mut Rng, n: usize) -> TrainingGroup {
        TrainingGroup::new(
            (0..n).map(|_| rng.gaussian(2)).collect(),
            (0..n).map(|_| rng.unit_vector(4)).collect(),
        )
        .unwrap()
    }

    fn zero_net(d: &Denoiser) -> Denoiser {
        let mut z = d.clone();
        z.params = d.params.zeros_like();
        z
    }

    #[test]
    fn zero_output_ldm_is_noise_energy() {
        let (d, s, mut rng) = setup(1);
        let eps = rng.gaussian(2);
        let (l, g) = loss_ldm(&zero_net(&d), &s, &[0.3, -1.0], &rng.unit_vector(4), &eps, 40, TimeWeight::One);
        assert!((l - eps.iter().map(|e| e * e).sum::<f64>()).abs() < 1e-15);
        assert!(g.flat().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn ldm_gradient_matches_finite_differences() {
        let (d, s, mut rng) = setup(2);
        let (z, c, eps) = (rng.gaussian(2), rng.unit_vector(4), rng.gaussian(2));
        let (_, g) = loss_ldm(&d, &s, &z, &c, &eps, 37, TimeWeight::One);
        let report = finite_diff_check(
            &|p: &crate::numerics::DenoiserParams| {
                let mut m = d.clone();
                m.params = p.clone();
                loss_ldm(&m, &s, &z, &c, &eps, 37, TimeWeight::One).0
            },
            &d.params,
            &g,
            1e-5,
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn sage_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3, 0);
        let d = Denoiser::init(2, 4, &[6, 6], 100, Activation::Silu, &mut rng);
        let s = NoiseSchedule::new(100, ScheduleKind::Linear).unwrap();
        let group = random_group(&mut rng, 2);
        let eps = rng.gaussian(2);
        for flow in [false, true] {
            let cfg = SageLossConfig {
                lambda2: 0.7,
                soft_target_grad: flow,
                ..SageLossConfig::for_beta(0.3, 100).unwrap()
            };
            let (_, g) = loss_sage(&d, &s, &group, &eps, 85, 20, &cfg);
            // The detached target is a constant: freeze it at the base point.
            let frozen = mean_of(&group.z.iter().zip(&group.c).map(|(z, c)| d.predict(&s.forward_sample(z, &eps, 85), 85, c)).collect::<Vec<_>>());
            let report = finite_diff_check(
                &|p: &crate::numerics::DenoiserParams| {
                    let mut m = d.clone();
                    m.params = p.clone();
                    if flow {
                        return loss_sage(&m, &s, &group, &eps, 85, 20, &cfg).0.total;
                    }
                    let (t, _) = loss_sage(&m, &s, &group, &eps, 85, 20, &SageLossConfig { lambda2: 0.0, ..cfg.clone() });
                    let shared = m.predict(&s.forward_sample(&group.z_bar(), &eps, 85), 85, &group.c_bar());
                    t.total + cfg.lambda2 * sq_dist(&shared, &frozen)
                },
                &d.params,
                &g,
                1e-5,
                1e-4,
            );
            assert!(report.passed(), "flow={flow}: {report:?}");
        }
    }

    #[test]
    fn singleton_group_collapses_to_two_ldm_terms() {
        let (d, s, mut rng) = setup(4);
        let group = random_group(&mut rng, 1);
        let eps = rng.gaussian(2);
        for lambda2 in [0.0, 0.5, 3.0] {
            let cfg = SageLossConfig { lambda1: 1.7, lambda2, ..SageLossConfig::for_beta(0.4, 100).unwrap() };
            let (terms, _) = loss_sage(&d, &s, &group, &eps, 77, 12, &cfg);
            assert_eq!(terms.soft, 0.0);
            let (a, _) = loss_ldm(&d, &s, &group.z[0], &group.c[0], &eps, 77, TimeWeight::One);
            let (b, _) = loss_ldm(&d, &s, &group.z[0], &group.c[0], &eps, 12, TimeWeight::One);
            assert!((terms.total - (1.7 * a + b)).abs() <= 1e-12 * (1.0 + terms.total));
        }
    }

    #[test]
    fn identical_members_give_shared_ldm_plus_branch() {
        let (d, s, mut rng) = setup(5);
        let (z, c) = (rng.gaussian(2), rng.unit_vector(4));
        let group = TrainingGroup::new(vec![z.clone(); 3], vec![c.clone(); 3]).unwrap();
        let eps = rng.gaussian(2);
        let cfg = SageLossConfig { lambda1: 1.0, lambda2: 0.0, ..SageLossConfig::for_beta(0.3, 100).unwrap() };
        let (terms, _) = loss_sage(&d, &s, &group, &eps, 90, 30, &cfg);
        let (a, _) = loss_ldm(&d, &s, &group.z_bar(), &group.c_bar(), &eps, 90, TimeWeight::One);
        let (b, _) = loss_ldm(&d, &s, &z, &c, &eps, 30, TimeWeight::One);
        assert!((terms.shared - a).abs() < 1e-12);
        assert!((terms.branch - b).abs() < 1e-12);
    }

    #[test]
    fn t_star_rounds_from_beta() {
        assert_eq!(SageLossConfig::for_beta(0.3, 1000).unwrap().t_star, 700);
        assert_eq!(SageLossConfig::for_beta(1.0, 1000).unwrap().t_star, 1);
        assert_eq!(SageLossConfig::for_beta(0.0, 1000).unwrap().t_star, 1000);
        assert!(SageLossConfig::for_beta(1.5, 1000).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [LossMode::Ldm, LossMode::Sage] {
            assert_eq!(m.to_string().parse::<LossMode>().unwrap(), m);
        }
        assert!("l2".parse::<LossMode>().is_err());
    }

    #[test]
    fn min_snr_weight_caps_low_noise_steps() {
        let s = NoiseSchedule::new(100, ScheduleKind::Linear).unwrap();
        assert!(TimeWeight::MinSnr(5.0).at(&s, 1) < 0.1);
        assert_eq!(TimeWeight::MinSnr(5.0).at(&s, 100), 1.0);
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let curve = LossCurve {
            rows: vec![LossRow { step: 1, terms: LossTerms { shared: 1.0, soft: 0.5, branch: 0.25, total: 1.75 } }],
        };
        assert_eq!(curve.to_csv(), "step,term1,term2,term3,total\n1,1.0,0.5,0.25,1.75\n");
        assert_eq!(curve.tail_mean(10), Some(1.75));
    }

    fn toy_groups(rng: &mut Rng, count: usize) -> Vec<TrainingGroup> {
        (0..count).map(|i| random_group(rng, 2 + i % 4)).collect()
    }

    #[test]
    fn one_gaussian_draw_per_group_per_step() {
        let (d, s, mut rng) = setup(6);
        let groups = toy_groups(&mut rng, 10);
        let cfg = TrainConfig::new(LossMode::Sage, SageLossConfig::for_beta(0.3, 100).unwrap());
        let mut trainer = Trainer::from_groups(d, &s, groups, cfg).unwrap();
        let mut run = Rng::new(60, 0);
        for k in 1..=5 {
            trainer.step(&mut run).unwrap();
            assert_eq!(run.gaussian_calls(), 4 * k);
        }
    }

    #[test]
    fn sampled_timesteps_respect_branch_point() {
        let s = NoiseSchedule::new(100, ScheduleKind::Linear).unwrap();
        let cfg = SageLossConfig::for_beta(0.3, 100).unwrap();
        let mut rng = Rng::new(7, 0);
        for _ in 0..10_000 {
            let t_s = rng.uniform_int(cfg.t_star, s.t_train());
            let t_b = rng.uniform_int(1, cfg.t_star);
            assert!(t_s >= cfg.t_star && t_s <= 100);
            assert!((1..=cfg.t_star).contains(&t_b));
        }
    }

    #[test]
    fn fixed_seed_gives_identical_curves() {
        let run = |mode| {
            let (d, s, mut rng) = setup(8);
            let groups = toy_groups(&mut rng, 12);
            let cfg = TrainConfig { lr: 1e-3, ..TrainConfig::new(mode, SageLossConfig::for_beta(0.3, 100).unwrap()) };
            let mut trainer = Trainer::from_groups(d, &s, groups, cfg).unwrap();
            let curve = train(&mut trainer, 30, &mut Rng::new(80, 0), 0, |_, _| Ok(())).unwrap();
            (curve, trainer.denoiser.params.flat())
        };
        for mode in [LossMode::Ldm, LossMode::Sage] {
            assert_eq!(run(mode), run(mode));
        }
    }

    #[test]
    fn ldm_mode_uses_only_the_branch_column() {
        let (d, s, mut rng) = setup(9);
        let groups = toy_groups(&mut rng, 6);
        let cfg = TrainConfig::new(LossMode::Ldm, SageLossConfig::for_beta(0.3, 100).unwrap());
        let mut trainer = Trainer::from_groups(d, &s, groups, cfg).unwrap();
        let terms = trainer.step(&mut Rng::new(90, 0)).unwrap();
        assert_eq!((terms.shared, terms.soft), (0.0, 0.0));
        assert_eq!(terms.total, terms.branch);
    }

    #[test]
    fn checkpoints_fire_on_schedule() {
        let (d, s, mut rng) = setup(10);
        let groups = toy_groups(&mut rng, 6);
        let cfg = TrainConfig::new(LossMode::Sage, SageLossConfig::for_beta(0.3, 100).unwrap());
        let mut trainer = Trainer::from_groups(d, &s, groups, cfg).unwrap();
        let mut seen = Vec::new();
        train(&mut trainer, 10, &mut Rng::new(1, 0), 4, |k, _| {
            seen.push(k);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![4, 8]);
    }

    #[test]
    fn non_finite_loss_keeps_last_good_parameters() {
        let (mut d, s, mut rng) = setup(11);
        let groups = toy_groups(&mut rng, 4);
        let mut flat = d.params.flat();
        flat[0] = f64::INFINITY;
        d.params.set_flat(&flat);
        let before = d.params.clone();
        let cfg = TrainConfig::new(LossMode::Sage, SageLossConfig::for_beta(0.3, 100).unwrap());
        let mut trainer = Trainer::from_groups(d, &s, groups, cfg).unwrap();
        let err = train(&mut trainer, 3, &mut Rng::new(2, 0), 0, |_, _| Ok(())).unwrap_err();
        assert_eq!(err.step, 1);
        assert_eq!(err.denoiser.params.flat().len(), before.flat().len());
        assert!(err.reason.is_numerical());
    }

    #[test]
    fn training_reduces_loss() {
        let (d, s, mut rng) = setup(12);
        let groups = toy_groups(&mut rng, 8);
        let cfg = TrainConfig { lr: 3e-3, ..TrainConfig::new(LossMode::Sage, SageLossConfig::for_beta(0.3, 100).unwrap()) };
        let mut trainer = Trainer::from_groups(d, &s, groups, cfg).unwrap();
        let before = trainer.evaluate(&mut Rng::new(5, 0), 200);
        train(&mut trainer, 1500, &mut Rng::new(3, 0), 0, |_, _| Ok(())).unwrap();
        let after = trainer.evaluate(&mut Rng::new(5, 0), 200);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }
}
