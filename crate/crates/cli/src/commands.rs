//! Subcommand definitions and their implementations.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sage_core::data::{GroupedDataset, World};
use sage_core::metrics::{evaluate, sign_test_p, ConfigEcho, MetricsReport, ReportTable};
use sage_core::model::{load_checkpoint, save_checkpoint, Denoiser, Guidance};
use sage_core::numerics::rng::derive_seed;
use sage_core::sampling::{read_samples, write_samples, write_traces, SampleRecord, SamplesHeader};
use sage_core::training::{Diverged, LossCurve, LossMode};
use sage_core::SageError;

use crate::config::{ConfigError, ExperimentConfig};
use crate::pipeline::{self, Scheme};
use crate::plot::{line_chart, scatter, Series};

pub const WORLD_FILE: &str = "world.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const GROUPS_FILE: &str = "groups.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "sage", version, about = "Shared-trajectory diffusion experiments on a synthetic concept world")]
pub struct Cli {
    /// TOML config file; keys not present keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Config override, e.g. `--set tau_min=0.7`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the concept world, records and clique groups.
    MakeData(MakeDataArgs),
    /// Train a denoiser with the LDM or SAGE objective.
    Train(TrainArgs),
    /// Sample every prompt with independent or shared trajectories.
    Sample(SampleArgs),
    /// Score a samples file and append a row to a report.
    Eval(EvalArgs),
    /// Render report and sample charts as SVG.
    Plot(PlotArgs),
    /// Evaluate a checkpoint over shared-step counts 0, 3, ..., 15.
    Sweep(SweepArgs),
    /// Run the full pipeline for every configured seed.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    /// Output directory; defaults to `<out_dir>/data`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by make-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Objective; defaults to the config's `loss`.
    #[arg(long, value_parser = ["ldm", "sage"])]
    pub loss: Option<String>,
    /// Step budget; defaults to `steps` (or `pretrain_steps` with --singletons).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Train on every record as its own group instead of the clique groups.
    #[arg(long)]
    pub singletons: bool,
    /// Accept an --init checkpoint from a different dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["independent", "shared"])]
    pub scheme: String,
    /// Samples file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Sharing ratio; defaults to the config's `beta`.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Exact number of shared grid steps; overrides --beta.
    #[arg(long)]
    pub shared_steps: Option<usize>,
    /// Model label recorded in the samples header.
    #[arg(long)]
    pub model: Option<String>,
    /// Cost report CSV.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    /// Per-group trajectory dump (JSON lines).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Proceed even if the checkpoint was trained on other data.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV; created if missing, appended to otherwise.
    #[arg(long)]
    pub report: PathBuf,
    /// Row label; defaults to the model named in the samples header.
    #[arg(long)]
    pub model: Option<String>,
    /// Proceed even if samples, data and report lineages disagree.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Samples file for the scatter plot.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Trace file whose shared prefixes are drawn as paths.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Number of groups shown in the scatter plot.
    #[arg(long, default_value_t = 6)]
    pub groups: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 15)]
    pub max_shared: usize,
    #[arg(long, default_value_t = 3)]
    pub stride: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also run the shared-step sweep for every model and seed.
    #[arg(long)]
    pub sweep: bool,
}

/// Artifacts from different lineages were combined.
#[derive(Debug)]
pub struct LineageError(pub String);

impl std::fmt::Display for LineageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (pass --force to proceed)", self.0)
    }
}

impl std::error::Error for LineageError {}

/// 0 success, 1 usage, 2 I/O, 3 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Diverged>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<SageError>() {
            return match e {
                SageError::Io { .. } | SageError::Format { .. } => 2,
                e if e.is_numerical() => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if cause.is::<ConfigError>() || cause.is::<LineageError>() {
            return 1;
        }
    }
    1
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::MakeData(a) => cmd_make_data(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Sample(a) => cmd_sample(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Plot(a) => cmd_plot(a),
        Command::Sweep(a) => cmd_sweep(&cfg, a),
        Command::Reproduce(a) => cmd_reproduce(&cfg, a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| SageError::io(dir, e).into())
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Lineage gate: mismatches are warnings that abort unless forced.
fn check_lineage(ok: bool, what: String, force: bool) -> anyhow::Result<()> {
    if ok {
        return Ok(());
    }
    log::warn!("{what}");
    if force {
        Ok(())
    } else {
        Err(LineageError(what).into())
    }
}

/// Dataset hash prefix of a `<data>.<train>` checkpoint stamp.
fn data_part(stamp: &str) -> &str {
    stamp.split('.').next().unwrap_or("")
}

pub fn write_data(cfg: &ExperimentConfig, dir: &Path, world: &World, dataset: &GroupedDataset) -> anyhow::Result<()> {
    create_dir(dir)?;
    world.write(&dir.join(WORLD_FILE))?;
    dataset.write(&dir.join(RECORDS_FILE), &dir.join(GROUPS_FILE), cfg.threshold)?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| SageError::io(&cfg_path, e))?;
    Ok(())
}

pub fn load_data(dir: &Path) -> anyhow::Result<(World, GroupedDataset)> {
    let world = World::read(&dir.join(WORLD_FILE))?;
    let dataset = GroupedDataset::read(&dir.join(RECORDS_FILE), &dir.join(GROUPS_FILE))?;
    Ok((world, dataset))
}

fn histogram_text(dataset: &GroupedDataset) -> String {
    dataset
        .size_histogram()
        .iter()
        .map(|(size, n)| format!("{size}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_make_data(cfg: &ExperimentConfig, args: MakeDataArgs) -> anyhow::Result<()> {
    let dir = args.out.unwrap_or_else(|| cfg.out_dir.join("data"));
    let (world, dataset) = pipeline::make_data(cfg)?;
    write_data(cfg, &dir, &world, &dataset)?;
    println!(
        "wrote {} concepts, {} records, {} groups of {} cliques to {}; group sizes {}",
        world.concepts.len(),
        dataset.records.len(),
        dataset.groups.len(),
        dataset.provenance.total_cliques,
        dir.display(),
        histogram_text(&dataset)
    );
    Ok(())
}

fn diverged(d: Box<Diverged>) -> anyhow::Error {
    anyhow::Error::new(*d)
}

fn cmd_train(cfg: &ExperimentConfig, args: TrainArgs) -> anyhow::Result<()> {
    let (_, dataset) = load_data(&args.data)?;
    let data_hash = dataset.provenance.config_hash.clone();
    let mode: LossMode = match &args.loss {
        Some(s) => s.parse()?,
        None => cfg.loss_mode()?,
    };
    let steps = args
        .steps
        .unwrap_or(if args.singletons { cfg.pretrain_steps } else { cfg.steps });
    let run_seed = if args.singletons { derive_seed(cfg.seed, 0) } else { cfg.seed };
    let (init, init_stamp) = match &args.init {
        Some(path) => {
            let (d, stamp) = load_checkpoint(path)?;
            check_lineage(
                data_part(&stamp) == data_hash,
                format!("initial checkpoint {} was trained on different data", path.display()),
                args.force,
            )?;
            (d, Some(stamp))
        }
        None => (pipeline::init_denoiser(cfg, run_seed), None),
    };
    let groups = if args.singletons {
        pipeline::singleton_groups(&dataset)
    } else {
        pipeline::dataset_groups(&dataset)?
    };
    let stamp = format!("{data_hash}.{}", cfg.train_hash(mode, steps, run_seed, init_stamp.as_deref()));
    let loss_csv = args.loss_csv.clone().unwrap_or_else(|| with_suffix(&args.out, ".loss.csv"));
    create_parent(&args.out)?;
    create_parent(&loss_csv)?;

    let sched = pipeline::schedule(cfg)?;
    let periodic = |step: usize, d: &Denoiser| save_checkpoint(&with_suffix(&args.out, &format!(".step{step}")), d, &stamp);
    let outcome = pipeline::train_model(cfg, &sched, groups, init, mode, steps, run_seed, periodic);
    let (denoiser, curve): (Denoiser, LossCurve) = match outcome {
        Ok(v) => v,
        Err(d) => {
            save_checkpoint(&args.out, &d.denoiser, &stamp)?;
            d.curve.write_csv(&loss_csv)?;
            log::warn!("last good parameters written to {}", args.out.display());
            return Err(diverged(d));
        }
    };
    save_checkpoint(&args.out, &denoiser, &stamp)?;
    curve.write_csv(&loss_csv)?;
    match curve.tail_mean(100) {
        Some(loss) => println!("trained {mode} for {steps} steps; final loss {loss:.5}; wrote {}", args.out.display()),
        None => println!("no training steps; wrote initial parameters to {}", args.out.display()),
    }
    Ok(())
}

struct LoadedCheckpoint {
    denoiser: Denoiser,
    stamp: String,
    label: String,
}

fn load_for_sampling(
    cfg: &ExperimentConfig,
    path: &Path,
    dataset: &GroupedDataset,
    label: Option<String>,
    force: bool,
) -> anyhow::Result<LoadedCheckpoint> {
    let (denoiser, stamp) = load_checkpoint(path)?;
    check_lineage(
        data_part(&stamp) == dataset.provenance.config_hash,
        format!("checkpoint {} was trained on different data", path.display()),
        force,
    )?;
    if denoiser.t_train() != cfg.t_train {
        bail!(ConfigError(format!(
            "checkpoint uses t_train = {} but the config says {}",
            denoiser.t_train(),
            cfg.t_train
        )));
    }
    let label = label.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    Ok(LoadedCheckpoint { denoiser, stamp, label })
}

#[allow(clippy::too_many_arguments)]
fn write_sample_run(
    cfg: &ExperimentConfig,
    ckpt: &LoadedCheckpoint,
    dataset: &GroupedDataset,
    scheme: Scheme,
    shared: usize,
    run: &pipeline::SampleRun,
    run_seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let header = SamplesHeader {
        config_hash: cfg.sample_hash(&ckpt.stamp, scheme.name(), shared, run_seed),
        data_hash: dataset.provenance.config_hash.clone(),
        model: ckpt.label.clone(),
        scheme: scheme.name().to_string(),
        independent_steps: run.cost.independent_steps,
        shared_steps: run.cost.shared_steps,
    };
    create_parent(out)?;
    write_samples(out, &header, &run.records)?;
    Ok(())
}

fn cmd_sample(cfg: &ExperimentConfig, args: SampleArgs) -> anyhow::Result<()> {
    let (world, dataset) = load_data(&args.data)?;
    let ckpt = load_for_sampling(cfg, &args.checkpoint, &dataset, args.model.clone(), args.force)?;
    let scheme: Scheme = args.scheme.parse()?;
    let shared = match scheme {
        Scheme::Independent => 0,
        Scheme::Shared => args
            .shared_steps
            .unwrap_or_else(|| pipeline::shared_steps_for(cfg, args.beta.unwrap_or(cfg.beta))),
    };
    let sched = pipeline::schedule(cfg)?;
    let prompts = pipeline::prompts(&world);
    let run = pipeline::sample_model_seeded(cfg, &sched, &ckpt.denoiser, &prompts, scheme, shared, cfg.seed)?;
    write_sample_run(cfg, &ckpt, &dataset, scheme, shared, &run, cfg.seed, &args.out)?;
    if let Some(path) = &args.cost {
        create_parent(path)?;
        let c = &run.cost;
        let text = format!(
            "independent_steps,shared_steps,saving_ratio\n{},{},{:?}\n",
            c.independent_steps, c.shared_steps, c.saving_ratio
        );
        fs::write(path, text).map_err(|e| SageError::io(path, e))?;
    }
    if let Some(path) = &args.trace {
        create_parent(path)?;
        write_traces(path, &run.traces)?;
    }
    println!(
        "wrote {} samples ({} scheme, {} of {} steps shared); cost saving {:.4}",
        run.records.len(),
        scheme.name(),
        run.grid.shared_steps(),
        run.grid.len(),
        run.cost.saving_ratio
    );
    Ok(())
}

pub fn guidance_label(g: &Guidance) -> String {
    match g {
        Guidance::Constant(w) => format!("{w:?}"),
        other => serde_json::to_string(other).unwrap_or_default(),
    }
}

/// Opens an existing report for appending, or starts one with `echo`.
fn open_report(path: &Path, echo: ConfigEcho, force: bool) -> anyhow::Result<ReportTable> {
    if !path.exists() {
        return Ok(ReportTable { echo, rows: Vec::new() });
    }
    let table = ReportTable::read(path)?;
    check_lineage(
        table.echo.config_hash == echo.config_hash,
        format!("report {} holds rows from another dataset", path.display()),
        force,
    )?;
    Ok(table)
}

fn echo_for(cfg: &ExperimentConfig, dataset: &GroupedDataset, seeds: Vec<u64>) -> ConfigEcho {
    ConfigEcho {
        tau_min: dataset.provenance.tau_min,
        tau_max: dataset.provenance.tau_max,
        omega: guidance_label(&cfg.guidance()),
        seeds,
        config_hash: dataset.provenance.config_hash.clone(),
    }
}

/// Splits off samples whose prompt id names no concept in `world`.
pub fn resolve_samples(records: Vec<SampleRecord>, world: &World) -> (Vec<SampleRecord>, BTreeSet<usize>) {
    let mut missing = BTreeSet::new();
    let kept = records
        .into_iter()
        .filter(|r| {
            let ok = world.concept(r.prompt_id).is_some();
            if !ok {
                missing.insert(r.prompt_id);
            }
            ok
        })
        .collect();
    (kept, missing)
}

fn cmd_eval(cfg: &ExperimentConfig, args: EvalArgs) -> anyhow::Result<()> {
    let (header, records) = read_samples(&args.samples)?;
    let (world, dataset) = load_data(&args.data)?;
    check_lineage(
        header.data_hash == dataset.provenance.config_hash,
        format!("samples {} come from a different dataset", args.samples.display()),
        args.force,
    )?;
    let total = records.len();
    let (records, missing) = resolve_samples(records, &world);
    let skipped = total - records.len();
    if !missing.is_empty() {
        let ids: Vec<String> = missing.iter().map(usize::to_string).collect();
        log::warn!("unresolvable prompt ids skipped: {}", ids.join(","));
    }
    if records.is_empty() {
        bail!(SageError::Config("no resolvable samples to evaluate".into()));
    }
    let (frechet, alignment, diversity, _) = evaluate(&records, &dataset.records, &world, None)?;
    let cost_saving =
        (header.independent_steps > 0).then(|| 1.0 - header.shared_steps as f64 / header.independent_steps as f64);
    let row = MetricsReport {
        model: args.model.unwrap_or(header.model),
        scheme: header.scheme,
        beta: records[0].beta,
        frechet,
        alignment,
        diversity,
        cost_saving,
    };
    let mut table = open_report(&args.report, echo_for(cfg, &dataset, vec![cfg.seed]), args.force)?;
    table.rows.push(row);
    create_parent(&args.report)?;
    table.write(&args.report)?;
    println!(
        "evaluated {} samples, skipped {skipped} with unresolvable ids; report has {} rows",
        records.len(),
        table.rows.len()
    );
    Ok(())
}

#[derive(Deserialize)]
struct TraceRow {
    group_id: usize,
    shared_prefix: Vec<(usize, Vec<f64>)>,
}

fn xy(v: &[f64]) -> (f64, f64) {
    (v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0))
}

type MetricGetter = fn(&MetricsReport) -> Option<f64>;

const METRICS: [(&str, MetricGetter); 4] = [
    ("frechet", |r| r.frechet),
    ("alignment", |r| r.alignment),
    ("diversity", |r| r.diversity),
    ("cost_saving", |r| r.cost_saving),
];

/// Line charts of each metric against the sharing ratio, one series per
/// model and scheme. Returns the files written.
pub fn plot_report(table: &ReportTable, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &table.rows {
        let k = (r.model.clone(), r.scheme.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut written = Vec::new();
    for (name, get) in METRICS {
        let series: Vec<Series> = keys
            .iter()
            .map(|(model, scheme)| {
                let mut points: Vec<(f64, f64)> = table
                    .rows
                    .iter()
                    .filter(|r| &r.model == model && &r.scheme == scheme)
                    .filter_map(|r| get(r).map(|v| (r.beta, v)))
                    .collect();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    label: format!("{model} {scheme}"),
                    points,
                }
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        if series.is_empty() {
            continue;
        }
        let path = dir.join(format!("{name}_vs_beta.svg"));
        let svg = line_chart(&format!("{name} vs sharing ratio"), "beta", name, &series);
        fs::write(&path, svg).map_err(|e| SageError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Scatter of the first `max_groups` groups' samples colored by prompt,
/// with shared-prefix paths from `traces` when given.
pub fn plot_samples(records: &[SampleRecord], traces: &[(usize, Vec<(f64, f64)>)], max_groups: usize) -> String {
    let mut shown: Vec<usize> = Vec::new();
    for r in records {
        if !shown.contains(&r.group_id) && shown.len() < max_groups {
            shown.push(r.group_id);
        }
    }
    let mut prompts: Vec<usize> = Vec::new();
    let points: Vec<(f64, f64, usize)> = records
        .iter()
        .filter(|r| shown.contains(&r.group_id))
        .map(|r| {
            let class = match prompts.iter().position(|&p| p == r.prompt_id) {
                Some(i) => i,
                None => {
                    prompts.push(r.prompt_id);
                    prompts.len() - 1
                }
            };
            let (x, y) = xy(&r.x0);
            (x, y, class)
        })
        .collect();
    let paths: Vec<Vec<(f64, f64)>> = traces
        .iter()
        .filter(|(g, p)| shown.contains(g) && p.len() > 1)
        .map(|(_, p)| p.clone())
        .collect();
    scatter("samples by prompt", &points, &paths)
}

fn read_traces(path: &Path) -> anyhow::Result<Vec<(usize, Vec<(f64, f64)>)>> {
    let text = fs::read_to_string(path).map_err(|e| SageError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: TraceRow =
                serde_json::from_str(l).map_err(|e| SageError::format("trace", e.to_string()))?;
            Ok((row.group_id, row.shared_prefix.iter().map(|(_, z)| xy(z)).collect()))
        })
        .collect()
}

fn cmd_plot(args: PlotArgs) -> anyhow::Result<()> {
    let table = ReportTable::read(&args.report)?;
    if table.rows.is_empty() {
        log::warn!("report {} has no rows; nothing to plot", args.report.display());
        return Ok(());
    }
    create_dir(&args.out)?;
    let mut written = plot_report(&table, &args.out)?;
    if let Some(samples) = &args.samples {
        let (_, records) = read_samples(samples)?;
        let traces = match &args.trace {
            Some(t) => read_traces(t)?,
            None => Vec::new(),
        };
        let path = args.out.join("samples.svg");
        fs::write(&path, plot_samples(&records, &traces, args.groups)).map_err(|e| SageError::io(&path, e))?;
        written.push(path);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Shared-step counts visited by the sweep.
pub fn sweep_points(max_shared: usize, stride: usize, n_steps: usize) -> Vec<usize> {
    (0..=max_shared.min(n_steps)).step_by(stride.max(1)).collect()
}

fn sweep_rows(
    cfg: &ExperimentConfig,
    denoiser: &Denoiser,
    label: &str,
    points: &[usize],
    world: &World,
    dataset: &GroupedDataset,
    run_seed: u64,
) -> anyhow::Result<Vec<MetricsReport>> {
    let sched = pipeline::schedule(cfg)?;
    let prompts = pipeline::prompts(world);
    points
        .iter()
        .map(|&s| {
            let run = pipeline::sample_model_seeded(cfg, &sched, denoiser, &prompts, Scheme::Shared, s, run_seed)?;
            Ok(pipeline::report_row(label, Scheme::Shared, &run, dataset, world)?)
        })
        .collect()
}

fn cmd_sweep(cfg: &ExperimentConfig, args: SweepArgs) -> anyhow::Result<()> {
    let (world, dataset) = load_data(&args.data)?;
    let ckpt = load_for_sampling(cfg, &args.checkpoint, &dataset, args.model.clone(), args.force)?;
    let points = sweep_points(args.max_shared, args.stride, cfg.n_steps);
    let rows = sweep_rows(cfg, &ckpt.denoiser, &ckpt.label, &points, &world, &dataset, cfg.seed)?;
    let mut table = open_report(&args.report, echo_for(cfg, &dataset, vec![cfg.seed]), args.force)?;
    table.rows.extend(rows);
    create_parent(&args.report)?;
    table.write(&args.report)?;
    println!("swept shared steps {points:?}; report has {} rows", table.rows.len());
    Ok(())
}

fn mean_opt(values: &[Option<f64>]) -> Option<f64> {
    let vs: Option<Vec<f64>> = values.iter().copied().collect();
    vs.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Row-wise mean over per-seed reports that share one layout.
pub fn mean_rows(per_seed: &[Vec<MetricsReport>]) -> Vec<MetricsReport> {
    let Some(first) = per_seed.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| {
            let col = |f: MetricGetter| mean_opt(&per_seed.iter().map(|rows| f(&rows[i])).collect::<Vec<_>>());
            MetricsReport {
                frechet: col(|r| r.frechet),
                alignment: col(|r| r.alignment),
                diversity: col(|r| r.diversity),
                cost_saving: col(|r| r.cost_saving),
                ..first[i].clone()
            }
        })
        .collect()
}

/// Paired comparison of SAGE against standard fine-tuning over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedComparison {
    pub metric: &'static str,
    pub wins: usize,
    pub seeds: usize,
    pub p_value: f64,
    pub mean_ratio: f64,
}

pub fn compare_seeds(
    metric: &'static str,
    sage: &[f64],
    standard: &[f64],
    wins: impl Fn(f64, f64) -> bool,
) -> SeedComparison {
    let w = sage.iter().zip(standard).filter(|(a, b)| wins(**a, **b)).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    SeedComparison {
        metric,
        wins: w,
        seeds: sage.len(),
        p_value: sign_test_p(w, sage.len()),
        mean_ratio: mean(sage) / mean(standard),
    }
}

const MODEL_NAMES: [&str; 3] = ["pretrained", "standard", "sage"];

fn cmd_reproduce(cfg: &ExperimentConfig, args: ReproduceArgs) -> anyhow::Result<()> {
    let out = args.out.unwrap_or_else(|| cfg.out_dir.clone());
    let summary = reproduce(cfg, &out, args.sweep)?;
    print!("{summary}");
    Ok(())
}

/// Full pipeline for every seed in `cfg.seeds`: data, three models,
/// samples, per-seed and mean reports, and a sign-test summary. Returns the
/// summary text, which is also written to `summary.txt`.
pub fn reproduce(cfg: &ExperimentConfig, out: &Path, with_sweep: bool) -> anyhow::Result<String> {
    let data_dir = out.join("data");
    let (world, dataset) = pipeline::make_data(cfg)?;
    write_data(cfg, &data_dir, &world, &dataset)?;
    let data_hash = dataset.provenance.config_hash.clone();
    let sched = pipeline::schedule(cfg)?;
    let prompts = pipeline::prompts(&world);
    let focus = pipeline::shared_steps_for(cfg, cfg.beta);

    let mut per_seed = Vec::new();
    let mut focus_rows: Vec<[MetricsReport; 2]> = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed{seed}"));
        create_dir(&dir)?;
        let set = pipeline::train_model_set(cfg, &sched, &dataset, seed).map_err(diverged)?;
        let pre = format!(
            "{data_hash}.{}",
            cfg.train_hash(LossMode::Ldm, cfg.pretrain_steps, derive_seed(seed, 0), None)
        );
        let std_stamp = format!("{data_hash}.{}", cfg.train_hash(LossMode::Ldm, cfg.steps, seed, Some(&pre)));
        let sage_stamp = format!("{data_hash}.{}", cfg.train_hash(LossMode::Sage, cfg.steps, seed, Some(&pre)));
        let models = [
            (set.pretrained, pre),
            (set.standard, std_stamp),
            (set.sage, sage_stamp),
        ];

        let mut rows = Vec::new();
        let mut sweep = Vec::new();
        let mut at_focus = Vec::new();
        for (((denoiser, stamp), name), curve) in models.into_iter().zip(MODEL_NAMES).zip(&set.curves) {
            save_checkpoint(&dir.join(format!("{name}.ckpt")), &denoiser, &stamp)?;
            curve.write_csv(&dir.join(format!("{name}.loss.csv")))?;
            let ckpt = LoadedCheckpoint {
                denoiser,
                stamp,
                label: name.to_string(),
            };
            let mut runs = vec![(Scheme::Independent, 0)];
            runs.extend(cfg.betas.iter().map(|&b| (Scheme::Shared, pipeline::shared_steps_for(cfg, b))));
            for (scheme, shared) in runs {
                let run = pipeline::sample_model_seeded(cfg, &sched, &ckpt.denoiser, &prompts, scheme, shared, seed)?;
                let file = dir.join(format!("samples_{name}_{}_{shared}.jsonl", scheme.name()));
                write_sample_run(cfg, &ckpt, &dataset, scheme, shared, &run, seed, &file)?;
                let row = pipeline::report_row(name, scheme, &run, &dataset, &world)?;
                if scheme == Scheme::Shared && shared == focus && name != "pretrained" {
                    at_focus.push(row.clone());
                }
                rows.push(row);
            }
            if with_sweep {
                let points = sweep_points(15, 3, cfg.n_steps);
                sweep.extend(sweep_rows(cfg, &ckpt.denoiser, name, &points, &world, &dataset, seed)?);
            }
        }
        let echo = echo_for(cfg, &dataset, vec![seed]);
        ReportTable { echo: echo.clone(), rows: rows.clone() }.write(&dir.join("report.csv"))?;
        if with_sweep {
            ReportTable { echo, rows: sweep }.write(&dir.join("sweep.csv"))?;
        }
        if let [standard, sage] = &at_focus[..] {
            focus_rows.push([standard.clone(), sage.clone()]);
        }
        per_seed.push(rows);
    }

    let table = ReportTable {
        echo: echo_for(cfg, &dataset, cfg.seeds.clone()),
        rows: mean_rows(&per_seed),
    };
    table.write(&out.join("report.csv"))?;

    let mut summary = format!(
        "seeds {:?}; {} groups of sizes {}; comparison at {} of {} shared steps\n",
        cfg.seeds,
        dataset.groups.len(),
        histogram_text(&dataset),
        focus,
        cfg.n_steps
    );
    if focus_rows.len() == cfg.seeds.len() {
        let pick = |f: MetricGetter, k: usize| -> Option<Vec<f64>> { focus_rows.iter().map(|r| f(&r[k])).collect() };
        let tests: [(&'static str, MetricGetter, fn(f64, f64) -> bool); 3] = [
            ("diversity", |r| r.diversity, |a, b| a >= 1.2 * b),
            ("frechet", |r| r.frechet, |a, b| a <= b),
            ("alignment", |r| r.alignment, |a, b| a >= b),
        ];
        for (metric, get, wins) in tests {
            if let (Some(std_v), Some(sage_v)) = (pick(get, 0), pick(get, 1)) {
                let c = compare_seeds(metric, &sage_v, &std_v, wins);
                summary.push_str(&format!(
                    "{metric}: sage wins {}/{} seeds, sign-test p = {:.4}, mean ratio sage/standard = {:.4}\n",
                    c.wins, c.seeds, c.p_value, c.mean_ratio
                ));
            }
        }
    }
    let path = out.join("summary.txt");
    fs::write(&path, &summary).map_err(|e| SageError::io(&path, e))?;
    Ok(summary)
}
