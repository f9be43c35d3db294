//! Shared-trajectory sampling, the independent baseline and step accounting.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::World;
use crate::error::{Result, SageError};
use crate::grouping::{greedy_partition, PromptGroup};
use crate::model::{ConceptEmbedding, Guidance, NoisePredictor};
use crate::numerics::linalg::{dot, norm};
use crate::numerics::rng::streams;
use crate::numerics::Rng;
use crate::schedule::{round_half_up, NoiseSchedule, SamplingGrid};

/// A conditioning prompt: the id of the concept it names plus its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub embedding: ConceptEmbedding,
}

impl AsRef<[f64]> for Prompt {
    fn as_ref(&self) -> &[f64] {
        self.embedding.as_slice()
    }
}

/// `(timestep, latent)` pairs in sampling order.
pub type Trajectory = Vec<(usize, Vec<f64>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub group_id: usize,
    /// Starts at `(T, z_T)` and ends at the branch latent.
    pub shared_prefix: Trajectory,
    /// One per member, each starting at the branch latent.
    pub branches: Vec<Trajectory>,
    pub finals: Vec<Vec<f64>>,
    pub shared_steps: usize,
    pub branch_steps: usize,
}

impl SampleTrace {
    pub fn steps_charged(&self) -> usize {
        self.shared_steps + self.branch_steps
    }
}

/// Denoiser evaluations of a batch against running every prompt alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub independent_steps: usize,
    pub shared_steps: usize,
    pub saving_ratio: f64,
}

impl CostReport {
    /// `group_sizes[k]` prompts sharing `shared[k]` of `n_steps` positions.
    pub fn new(group_sizes: &[usize], shared: &[usize], n_steps: usize) -> Self {
        assert_eq!(group_sizes.len(), shared.len());
        let prompts: usize = group_sizes.iter().sum();
        let independent_steps = prompts * n_steps;
        let shared_steps = group_sizes
            .iter()
            .zip(shared)
            .map(|(&n, &s)| s + n * (n_steps - s))
            .sum();
        let saving_ratio = if independent_steps == 0 {
            0.0
        } else {
            1.0 - shared_steps as f64 / independent_steps as f64
        };
        Self {
            independent_steps,
            shared_steps,
            saving_ratio,
        }
    }

    pub fn from_traces(traces: &[SampleTrace], n_steps: usize) -> Self {
        let sizes: Vec<usize> = traces.iter().map(|t| t.finals.len()).collect();
        let shared: Vec<usize> = traces.iter().map(|t| t.shared_steps).collect();
        Self::new(&sizes, &shared, n_steps)
    }
}

/// `beta * sum(N_k - 1) / sum(N_k)`.
pub fn closed_form_saving(beta: f64, group_sizes: &[usize]) -> f64 {
    let total: usize = group_sizes.iter().sum();
    let extra: usize = group_sizes.iter().map(|n| n - 1).sum();
    beta * extra as f64 / total as f64
}

/// DDIM over `positions` starting from `z`, recording every latent.
fn run_phase<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    positions: impl Iterator<Item = (usize, usize, usize)>,
    z: Vec<f64>,
    c: &[f64],
    guidance: &Guidance,
    trajectory: &mut Trajectory,
) -> Result<Vec<f64>> {
    let mut z = z;
    for (_, t, t_prev) in positions {
        let eps = predictor.predict_cfg(&z, t, c, guidance.at(t));
        z = schedule.ddim_step(&z, &eps, t, t_prev)?;
        trajectory.push((t_prev, z.clone()));
    }
    Ok(z)
}

fn group_grid(grid: &SamplingGrid, group: &PromptGroup) -> Result<SamplingGrid> {
    match group.beta {
        Some(beta) if (0.0..=1.0).contains(&beta) => {
            grid.with_shared_steps(round_half_up(beta * grid.len() as f64).min(grid.len()))
        }
        Some(beta) => Err(SageError::Config(format!("group sharing ratio {beta} outside [0, 1]"))),
        None => Ok(grid.clone()),
    }
}

/// Shared phase under the centroid from `z_t`, then one branch per member
/// under its own condition.
#[allow(clippy::too_many_arguments)]
pub fn sample_shared_from<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &SamplingGrid,
    group: &PromptGroup,
    group_id: usize,
    prompts: &[Prompt],
    guidance: &Guidance,
    z_t: Vec<f64>,
) -> Result<SampleTrace> {
    if group.is_empty() {
        return Err(SageError::Config("cannot sample an empty group".into()));
    }
    let grid = group_grid(grid, group)?;
    let mut shared_prefix = vec![(grid.steps()[0], z_t.clone())];
    let z_branch = run_phase(
        predictor,
        schedule,
        grid.shared_positions(),
        z_t,
        &group.centroid,
        guidance,
        &mut shared_prefix,
    )?;
    let branch_t = shared_prefix.last().map(|(t, _)| *t).unwrap_or(0);
    let mut branches = Vec::with_capacity(group.len());
    let mut finals = Vec::with_capacity(group.len());
    for &m in &group.members {
        let c = prompts
            .get(m)
            .ok_or_else(|| SageError::Shape(format!("group member {m} has no prompt")))?;
        let mut traj = vec![(branch_t, z_branch.clone())];
        let x0 = run_phase(
            predictor,
            schedule,
            grid.branch_positions(),
            z_branch.clone(),
            c.embedding.as_slice(),
            guidance,
            &mut traj,
        )?;
        branches.push(traj);
        finals.push(x0);
    }
    Ok(SampleTrace {
        group_id,
        shared_prefix,
        branches,
        finals,
        shared_steps: grid.shared_steps(),
        branch_steps: group.len() * grid.branch_index(),
    })
}

/// One Gaussian `z_T` for the whole group, drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn sample_shared<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &SamplingGrid,
    group: &PromptGroup,
    group_id: usize,
    prompts: &[Prompt],
    guidance: &Guidance,
    rng: &mut Rng,
) -> Result<SampleTrace> {
    let z_t = rng.gaussian(predictor.data_dim());
    sample_shared_from(predictor, schedule, grid, group, group_id, prompts, guidance, z_t)
}

/// Full-length DDIM for one prompt from a given `z_T`.
pub fn ddim_trajectory<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &SamplingGrid,
    c: &[f64],
    guidance: &Guidance,
    z_t: Vec<f64>,
) -> Result<Trajectory> {
    let mut traj = vec![(grid.steps()[0], z_t.clone())];
    run_phase(predictor, schedule, grid.all_positions(), z_t, c, guidance, &mut traj)?;
    Ok(traj)
}

/// Every prompt alone with its own initial noise; prompt `i` draws from
/// stream `INDEPENDENT_OFFSET + i` of `seed`.
pub fn sample_independent<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &SamplingGrid,
    prompts: &[Prompt],
    guidance: &Guidance,
    seed: u64,
) -> Result<Vec<SampleTrace>> {
    if prompts.is_empty() {
        return Err(SageError::Config("no prompts to sample".into()));
    }
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = Rng::new(seed, streams::INDEPENDENT_OFFSET + i as u64);
            let z_t = rng.gaussian(predictor.data_dim());
            let traj = ddim_trajectory(predictor, schedule, grid, p.embedding.as_slice(), guidance, z_t.clone())?;
            let x0 = traj.last().expect("non-empty trajectory").1.clone();
            Ok(SampleTrace {
                group_id: i,
                shared_prefix: vec![traj[0].clone()],
                branches: vec![traj],
                finals: vec![x0],
                shared_steps: 0,
                branch_steps: grid.len(),
            })
        })
        .collect()
}

/// Samples each group with its own stream (stream id = group index).
pub fn sample_groups<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &SamplingGrid,
    groups: &[PromptGroup],
    prompts: &[Prompt],
    guidance: &Guidance,
    seed: u64,
) -> Result<Vec<SampleTrace>> {
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut rng = Rng::new(seed, k as u64);
            sample_shared(predictor, schedule, grid, g, k, prompts, guidance, &mut rng)
        })
        .collect()
}

/// One generated sample as stored in the samples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub prompt_id: usize,
    pub group_id: usize,
    pub x0: Vec<f64>,
    pub beta: f64,
    pub omega: Guidance,
    pub seed: u64,
}

/// Flattens traces into records; `members` maps each trace's branches back
/// to prompt indices.
pub fn to_records(
    traces: &[SampleTrace],
    members: &[Vec<usize>],
    prompts: &[Prompt],
    beta: f64,
    guidance: &Guidance,
    seed: u64,
) -> Vec<SampleRecord> {
    traces
        .iter()
        .zip(members)
        .flat_map(|(trace, m)| {
            trace.finals.iter().zip(m).map(move |(x0, &i)| SampleRecord {
                prompt_id: prompts[i].id,
                group_id: trace.group_id,
                x0: x0.clone(),
                beta,
                omega: guidance.clone(),
                seed,
            })
        })
        .collect()
}

/// Partition, share, branch; returns one record per prompt in group order.
#[allow(clippy::too_many_arguments)]
pub fn run_batch<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    prompts: &[Prompt],
    grid: &SamplingGrid,
    threshold: f64,
    guidance: &Guidance,
    seed: u64,
) -> Result<(Vec<SampleRecord>, CostReport, Vec<SampleTrace>)> {
    if prompts.is_empty() {
        return Err(SageError::Config("no prompts to sample".into()));
    }
    let groups = greedy_partition(prompts, threshold)?;
    let traces = sample_groups(predictor, schedule, grid, &groups, prompts, guidance, seed)?;
    let members: Vec<Vec<usize>> = groups.iter().map(|g| g.members.clone()).collect();
    let records = to_records(&traces, &members, prompts, grid.beta(), guidance, seed);
    let cost = CostReport::from_traces(&traces, grid.len());
    Ok((records, cost, traces))
}

/// Independent baseline over the same partition `run_batch` would use, so
/// that records carry comparable group ids.
pub fn run_independent_batch<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    prompts: &[Prompt],
    grid: &SamplingGrid,
    threshold: f64,
    guidance: &Guidance,
    seed: u64,
) -> Result<(Vec<SampleRecord>, CostReport, Vec<SampleTrace>)> {
    let groups = greedy_partition(prompts, threshold)?;
    let traces = sample_independent(predictor, schedule, grid, prompts, guidance, seed)?;
    let mut records = Vec::with_capacity(prompts.len());
    for (k, g) in groups.iter().enumerate() {
        for &m in &g.members {
            records.push(SampleRecord {
                prompt_id: prompts[m].id,
                group_id: k,
                x0: traces[m].finals[0].clone(),
                beta: 0.0,
                omega: guidance.clone(),
                seed,
            });
        }
    }
    let cost = CostReport::from_traces(&traces, grid.len());
    Ok((records, cost, traces))
}

/// First line of a samples file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplesHeader {
    pub config_hash: String,
    /// Hash of the dataset the sampled prompts came from.
    pub data_hash: String,
    pub model: String,
    pub scheme: String,
    pub independent_steps: usize,
    pub shared_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    provenance: SamplesHeader,
}

pub fn write_samples(path: &Path, header: &SamplesHeader, records: &[SampleRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| SageError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let json = |e: serde_json::Error| SageError::format("samples", e.to_string());
    let head = HeaderLine {
        provenance: header.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&head).map_err(json)?).map_err(|e| SageError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(json)?;
        writeln!(w, "{line}").map_err(|e| SageError::io(path, e))?;
    }
    w.flush().map_err(|e| SageError::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<(SamplesHeader, Vec<SampleRecord>)> {
    let file = fs::File::open(path).map_err(|e| SageError::io(path, e))?;
    let json = |e: serde_json::Error| SageError::format("samples", e.to_string());
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| SageError::format("samples", "empty file"))?
        .map_err(|e| SageError::io(path, e))?;
    let header = serde_json::from_str::<HeaderLine>(&first).map_err(json)?.provenance;
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| SageError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(json)?);
        }
    }
    Ok((header, out))
}

/// Trace dump: one JSON object per group with both phases.
pub fn write_traces(path: &Path, traces: &[SampleTrace]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        group_id: usize,
        shared_prefix: &'a Trajectory,
        branches: &'a [Trajectory],
        shared_steps: usize,
        branch_steps: usize,
    }
    let file = fs::File::create(path).map_err(|e| SageError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in traces {
        let row = Row {
            group_id: t.group_id,
            shared_prefix: &t.shared_prefix,
            branches: &t.branches,
            shared_steps: t.shared_steps,
            branch_steps: t.branch_steps,
        };
        let line = serde_json::to_string(&row).map_err(|e| SageError::format("trace", e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| SageError::io(path, e))?;
    }
    w.flush().map_err(|e| SageError::io(path, e))
}

/// Optimal noise prediction for data `N(mean, spread^2 I)`:
/// `(z - alpha E[z0|z]) / sigma` with
/// `E[z0|z] = (alpha s^2 z + sigma^2 mean) / (alpha^2 s^2 + sigma^2)`.
pub fn gaussian_eps(schedule: &NoiseSchedule, z_t: &[f64], t: usize, mean: &[f64], spread: f64) -> Vec<f64> {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let v = spread * spread;
    let denom = a * a * v + s * s;
    z_t.iter()
        .zip(mean)
        .map(|(z, m)| {
            let x0 = (a * v * z + s * s * m) / denom;
            (z - a * x0) / s
        })
        .collect()
}

/// Closed-form denoiser for a single Gaussian concept; ignores the condition.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub schedule: NoiseSchedule,
    pub mean: Vec<f64>,
    pub spread: f64,
    pub embed_dim: usize,
}

impl NoisePredictor for GaussianOracle {
    fn data_dim(&self) -> usize {
        self.mean.len()
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn predict(&self, z_t: &[f64], t: usize, _c: &[f64]) -> Vec<f64> {
        gaussian_eps(&self.schedule, z_t, t, &self.mean, self.spread)
    }
}

/// Closed-form denoiser for a concept world. A condition selects the
/// concept with the highest cosine; the null condition gets the exact
/// posterior for the equal-weight mixture of all concepts.
#[derive(Debug, Clone)]
pub struct WorldOracle<'a> {
    pub schedule: NoiseSchedule,
    pub world: &'a World,
}

impl WorldOracle<'_> {
    fn mixture_eps(&self, z_t: &[f64], t: usize) -> Vec<f64> {
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let d = z_t.len() as f64;
        let logs: Vec<f64> = self
            .world
            .concepts
            .iter()
            .map(|c| {
                let var = a * a * c.spread * c.spread + s * s;
                let r2: f64 = z_t.iter().zip(&c.mean).map(|(z, m)| (z - a * m).powi(2)).sum();
                -0.5 * r2 / var - 0.5 * d * var.ln()
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; z_t.len()];
        for (c, w) in self.world.concepts.iter().zip(&weights) {
            let e = gaussian_eps(&self.schedule, z_t, t, &c.mean, c.spread);
            out.iter_mut().zip(&e).for_each(|(o, x)| *o += w / total * x);
        }
        out
    }
}

impl NoisePredictor for WorldOracle<'_> {
    fn data_dim(&self) -> usize {
        self.world.params.data_dim
    }

    fn embed_dim(&self) -> usize {
        self.world.params.embed_dim
    }

    fn predict(&self, z_t: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        if norm(c) == 0.0 {
            return self.mixture_eps(z_t, t);
        }
        let best = self
            .world
            .concepts
            .iter()
            .max_by(|a, b| dot(a.embedding.as_slice(), c).total_cmp(&dot(b.embedding.as_slice(), c)))
            .expect("world has concepts");
        gaussian_eps(&self.schedule, z_t, t, &best.mean, best.spread)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Denoiser;
    use crate::numerics::Activation;
    use crate::schedule::{build_grid, ScheduleKind};

    fn setup(seed: u64) -> (Denoiser, NoiseSchedule, Vec<Prompt>) {
        let mut rng = Rng::new(seed, 0);
        let d = Denoiser::init(2, 4, &[8], 1000, Activation::Silu, &mut rng);
        let prompts = (0..5)
            .map(|i| Prompt {
                id: i,
                embedding: ConceptEmbedding::new(rng.unit_vector(4)).unwrap(),
            })
            .collect();
        (d, NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap(), prompts)
    }

    fn group_of(members: Vec<usize>, prompts: &[Prompt]) -> PromptGroup {
        PromptGroup::new(members, prompts)
    }

    #[test]
    fn zero_sharing_matches_independent_ddim() {
        let (d, s, prompts) = setup(1);
        let grid = build_grid(&s, 30, 0.0).unwrap();
        let g = group_of(vec![0, 2, 3], &prompts);
        let z_t = Rng::new(9, 0).gaussian(2);
        let trace = sample_shared_from(&d, &s, &grid, &g, 0, &prompts, &Guidance::Constant(2.0), z_t.clone()).unwrap();
        for (branch, &m) in trace.branches.iter().zip(&g.members) {
            let solo = ddim_trajectory(&d, &s, &grid, prompts[m].embedding.as_slice(), &Guidance::Constant(2.0), z_t.clone()).unwrap();
            assert_eq!(branch, &solo);
        }
    }

    #[test]
    fn full_sharing_collapses_the_group() {
        let (d, s, prompts) = setup(2);
        let grid = build_grid(&s, 30, 1.0).unwrap();
        let g = group_of(vec![1, 4], &prompts);
        let trace = sample_shared(&d, &s, &grid, &g, 0, &prompts, &Guidance::Constant(1.5), &mut Rng::new(3, 0)).unwrap();
        assert_eq!(trace.finals[0], trace.finals[1]);
        assert_eq!(trace.branch_steps, 0);
    }

    #[test]
    fn branches_start_where_the_prefix_ends() {
        let (d, s, prompts) = setup(3);
        let grid = build_grid(&s, 30, 0.3).unwrap();
        let g = group_of(vec![0, 1, 2, 3], &prompts);
        let trace = sample_shared(&d, &s, &grid, &g, 0, &prompts, &Guidance::Constant(7.5), &mut Rng::new(4, 0)).unwrap();
        let last = trace.shared_prefix.last().unwrap();
        assert_eq!(trace.shared_prefix.len(), 10);
        for b in &trace.branches {
            assert_eq!(&b[0], last);
            assert_eq!(b.last().unwrap().0, 0);
        }
        assert_eq!((trace.shared_steps, trace.branch_steps), (9, 4 * 21));
    }

    #[test]
    fn group_override_moves_the_branch_point() {
        let (d, s, prompts) = setup(4);
        let grid = build_grid(&s, 30, 0.3).unwrap();
        let mut g = group_of(vec![0, 1], &prompts);
        g.beta = Some(0.5);
        let trace = sample_shared(&d, &s, &grid, &g, 0, &prompts, &Guidance::Constant(1.0), &mut Rng::new(5, 0)).unwrap();
        assert_eq!(trace.shared_steps, 15);
    }

    #[test]
    fn independent_sampling_is_reproducible_and_counted() {
        let (d, s, prompts) = setup(5);
        let grid = build_grid(&s, 30, 0.3).unwrap();
        let a = sample_independent(&d, &s, &grid, &prompts, &Guidance::Constant(3.0), 11).unwrap();
        let b = sample_independent(&d, &s, &grid, &prompts, &Guidance::Constant(3.0), 11).unwrap();
        assert_eq!(a, b);
        let cost = CostReport::from_traces(&a, grid.len());
        assert_eq!(cost.shared_steps, prompts.len() * 30);
        assert_eq!(cost.saving_ratio, 0.0);
    }

    #[test]
    fn pairs_at_twenty_percent_save_ten_percent() {
        let cost = CostReport::new(&[2; 7], &[6; 7], 30);
        assert!((cost.saving_ratio - 0.1).abs() < 1e-12);
        assert!((closed_form_saving(0.2, &[2; 7]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dissimilar_prompts_save_nothing() {
        let (d, s, _) = setup(6);
        let prompts: Vec<Prompt> = (0..4)
            .map(|i| {
                let mut e = vec![0.0; 4];
                e[i] = 1.0;
                Prompt { id: i, embedding: ConceptEmbedding::new(e).unwrap() }
            })
            .collect();
        let grid = build_grid(&s, 30, 0.4).unwrap();
        let (records, cost, _) = run_batch(&d, &s, &prompts, &grid, 0.5, &Guidance::Constant(7.5), 1).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(cost.saving_ratio, 0.0);
    }

    #[test]
    fn gaussian_oracle_recovers_mean_at_zero_spread() {
        let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
        let oracle = GaussianOracle { schedule: s.clone(), mean: vec![0.5, -1.0], spread: 0.0, embed_dim: 4 };
        let grid = build_grid(&s, 30, 0.0).unwrap();
        let traj = ddim_trajectory(&oracle, &s, &grid, &[0.0; 4], &Guidance::Constant(1.0), vec![2.0, 3.0]).unwrap();
        let x0 = &traj.last().unwrap().1;
        assert!((x0[0] - 0.5).abs() < 1e-9 && (x0[1] + 1.0).abs() < 1e-9, "{x0:?}");
    }

    #[test]
    fn samples_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (d, s, prompts) = setup(7);
        let grid = build_grid(&s, 30, 0.3).unwrap();
        let (records, _, traces) = run_batch(&d, &s, &prompts, &grid, 0.0, &Guidance::Constant(7.5), 3).unwrap();
        let path = dir.path().join("samples.jsonl");
        let header = SamplesHeader { config_hash: "c".into(), scheme: "shared".into(), ..Default::default() };
        write_samples(&path, &header, &records).unwrap();
        assert_eq!(read_samples(&path).unwrap(), (header, records));
        write_traces(&dir.path().join("trace.jsonl"), &traces).unwrap();
    }
}
