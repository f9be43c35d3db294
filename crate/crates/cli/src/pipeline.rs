//! Experiment stages shared by the subcommands and the acceptance suite.

use sage_core::data::{build_grouped_dataset, make_world, sample_records, GroupedDataset, World};
use sage_core::grouping::greedy_partition;
use sage_core::metrics::{evaluate, MetricsReport};
use sage_core::model::Denoiser;
use sage_core::numerics::rng::{derive_seed, streams};
use sage_core::numerics::Rng;
use sage_core::sampling::{
    run_independent_batch, sample_groups, to_records, CostReport, Prompt, SampleRecord, SampleTrace,
};
use sage_core::schedule::{build_grid, build_schedule, NoiseSchedule, SamplingGrid};
use sage_core::training::{train, Diverged, LossCurve, LossMode, Trainer, TrainingGroup};
use sage_core::{Result, SageError};

use crate::config::ExperimentConfig;

const LABEL_TRAIN: u64 = 0x7472_6169_6e;
const LABEL_SAMPLE: u64 = 0x7361_6d70_6c65;

/// Deterministic world and grouped dataset for the configured seed.
pub fn make_data(cfg: &ExperimentConfig) -> Result<(World, GroupedDataset)> {
    let params = cfg.world_params();
    let mut world = make_world(&mut Rng::new(cfg.seed, streams::WORLD), &params)?;
    world.config_hash = cfg.data_hash();
    let records = sample_records(&mut Rng::new(cfg.seed, streams::RECORDS), &world, cfg.records_per_concept);
    let mut dataset = build_grouped_dataset(records, cfg.tau_min, cfg.tau_max, cfg.target_groups, cfg.seed, &params)?;
    dataset.provenance.config_hash = cfg.data_hash();
    Ok((world, dataset))
}

pub fn schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    build_schedule(cfg.t_train, &cfg.schedule)
}

pub fn init_denoiser(cfg: &ExperimentConfig, run_seed: u64) -> Denoiser {
    let act = cfg.activation().expect("validated activation");
    let mut rng = Rng::new(run_seed, streams::INIT);
    Denoiser::init(cfg.data_dim, cfg.embed_dim, &cfg.hidden, cfg.t_train, act, &mut rng)
}

/// One prompt per concept, in concept order.
pub fn prompts(world: &World) -> Vec<Prompt> {
    world
        .concepts
        .iter()
        .map(|c| Prompt {
            id: c.id,
            embedding: c.embedding.clone(),
        })
        .collect()
}

/// Every record as its own group, for plain pretraining.
pub fn singleton_groups(dataset: &GroupedDataset) -> Vec<TrainingGroup> {
    dataset
        .records
        .iter()
        .map(|r| TrainingGroup::new(vec![r.x.clone()], vec![r.embedding.as_slice().to_vec()]).expect("one member"))
        .collect()
}

pub fn dataset_groups(dataset: &GroupedDataset) -> Result<Vec<TrainingGroup>> {
    dataset.groups.iter().map(|g| TrainingGroup::from_dataset(dataset, g)).collect()
}

/// Runs `steps` optimizer steps from `init`; the training stream is derived
/// from `run_seed` and the loss mode so that the two fine-tunes of one seed
/// do not share batches by accident.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    groups: Vec<TrainingGroup>,
    init: Denoiser,
    mode: LossMode,
    steps: usize,
    run_seed: u64,
    checkpoint: impl FnMut(usize, &Denoiser) -> Result<()>,
) -> std::result::Result<(Denoiser, LossCurve), Box<Diverged>> {
    let wrap = |reason: SageError| {
        Box::new(Diverged {
            step: 0,
            reason,
            denoiser: init.clone(),
            curve: LossCurve::default(),
        })
    };
    let tc = cfg.train_config(mode).map_err(wrap)?;
    let mut trainer = Trainer::from_groups(init.clone(), schedule, groups, tc).map_err(wrap)?;
    let label = derive_seed(LABEL_TRAIN, mode as u64);
    let mut rng = Rng::new(derive_seed(run_seed, label), streams::TRAIN);
    let curve = train(&mut trainer, steps, &mut rng, cfg.checkpoint_every, checkpoint)?;
    Ok((trainer.denoiser, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Independent,
    Shared,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Independent => "independent",
            Scheme::Shared => "shared",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = SageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Scheme::Independent),
            "shared" => Ok(Scheme::Shared),
            other => Err(SageError::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

pub struct SampleRun {
    pub records: Vec<SampleRecord>,
    pub cost: CostReport,
    pub traces: Vec<SampleTrace>,
    pub grid: SamplingGrid,
}

/// Samples every prompt `samples_per_prompt` times. Repetition `r` uses the
/// sampling seed derived from `(run_seed, r)`; group ids are offset so that
/// each repetition's groups stay distinct.
pub fn sample_model(
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    denoiser: &Denoiser,
    prompts: &[Prompt],
    scheme: Scheme,
    shared_steps: usize,
) -> Result<SampleRun> {
    sample_model_seeded(cfg, schedule, denoiser, prompts, scheme, shared_steps, cfg.seed)
}

pub fn sample_model_seeded(
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    denoiser: &Denoiser,
    prompts: &[Prompt],
    scheme: Scheme,
    shared_steps: usize,
    run_seed: u64,
) -> Result<SampleRun> {
    let grid = build_grid(schedule, cfg.n_steps, 0.0)?.with_shared_steps(shared_steps)?;
    let groups = greedy_partition(prompts, cfg.threshold)?;
    let guidance = cfg.guidance();
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for rep in 0..cfg.samples_per_prompt {
        let seed = derive_seed(derive_seed(run_seed, LABEL_SAMPLE), rep as u64);
        let offset = rep * groups.len();
        let (mut recs, _, mut tr) = match scheme {
            Scheme::Independent => {
                run_independent_batch(denoiser, schedule, prompts, &grid, cfg.threshold, &guidance, seed)?
            }
            Scheme::Shared => {
                let tr = sample_groups(denoiser, schedule, &grid, &groups, prompts, &guidance, seed)?;
                let members: Vec<Vec<usize>> = groups.iter().map(|g| g.members.clone()).collect();
                let recs = to_records(&tr, &members, prompts, grid.beta(), &guidance, seed);
                (recs, CostReport::new(&[], &[], 0), tr)
            }
        };
        recs.iter_mut().for_each(|r| r.group_id += offset);
        tr.iter_mut().for_each(|t| t.group_id += offset);
        records.append(&mut recs);
        traces.append(&mut tr);
    }
    let cost = CostReport::from_traces(&traces, grid.len());
    Ok(SampleRun {
        records,
        cost,
        traces,
        grid,
    })
}

pub fn report_row(
    model: &str,
    scheme: Scheme,
    run: &SampleRun,
    dataset: &GroupedDataset,
    world: &World,
) -> Result<MetricsReport> {
    let (frechet, alignment, diversity, cost_saving) = evaluate(&run.records, &dataset.records, world, Some(&run.cost))?;
    Ok(MetricsReport {
        model: model.to_string(),
        scheme: scheme.name().to_string(),
        beta: run.grid.beta(),
        frechet,
        alignment,
        diversity,
        cost_saving,
    })
}

/// The three Table-1 models for one seed.
pub struct ModelSet {
    pub pretrained: Denoiser,
    pub standard: Denoiser,
    pub sage: Denoiser,
    pub curves: [LossCurve; 3],
}

pub fn train_model_set(
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    dataset: &GroupedDataset,
    run_seed: u64,
) -> std::result::Result<ModelSet, Box<Diverged>> {
    let init = init_denoiser(cfg, run_seed);
    let no_ckpt = |_: usize, _: &Denoiser| Ok(());
    let (pretrained, c0) = train_model(
        cfg,
        schedule,
        singleton_groups(dataset),
        init,
        LossMode::Ldm,
        cfg.pretrain_steps,
        derive_seed(run_seed, 0),
        no_ckpt,
    )?;
    let groups = dataset_groups(dataset).map_err(|reason| {
        Box::new(Diverged {
            step: 0,
            reason,
            denoiser: pretrained.clone(),
            curve: LossCurve::default(),
        })
    })?;
    let (standard, c1) = train_model(cfg, schedule, groups.clone(), pretrained.clone(), LossMode::Ldm, cfg.steps, run_seed, no_ckpt)?;
    let (sage, c2) = train_model(cfg, schedule, groups, pretrained.clone(), LossMode::Sage, cfg.steps, run_seed, no_ckpt)?;
    Ok(ModelSet {
        pretrained,
        standard,
        sage,
        curves: [c0, c1, c2],
    })
}

/// Shared positions for a sharing ratio on the configured grid.
pub fn shared_steps_for(cfg: &ExperimentConfig, beta: f64) -> usize {
    sage_core::schedule::round_half_up(beta * cfg.n_steps as f64).min(cfg.n_steps)
}
