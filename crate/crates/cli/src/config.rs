//! Flat experiment configuration, overrides and stage hashes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use sage_core::data::WorldParams;
use sage_core::model::Guidance;
use sage_core::numerics::Activation;
use sage_core::training::{LossMode, SageLossConfig, TimeWeight, TrainConfig};

pub const SEED_ENV: &str = "SAGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,

    pub n_meta: usize,
    pub children_per_meta: usize,
    pub embed_dim: usize,
    pub data_dim: usize,
    pub spread: f64,
    pub radius: f64,
    pub offset_scale: f64,
    pub records_per_concept: usize,
    pub target_groups: usize,
    pub tau_min: f64,
    pub tau_max: f64,

    pub t_train: usize,
    pub schedule: String,
    pub n_steps: usize,

    pub hidden: Vec<usize>,
    pub activation: String,

    pub loss: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub min_snr_gamma: Option<f64>,
    pub cfg_dropout: f64,
    pub soft_target_grad: bool,
    pub pretrain_steps: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_groups: usize,
    pub checkpoint_every: usize,

    pub beta: f64,
    pub betas: Vec<f64>,
    pub threshold: f64,
    pub omega: f64,
    pub samples_per_prompt: usize,
    pub seeds: Vec<u64>,

    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = WorldParams::default();
        Self {
            seed: 1,
            n_meta: w.n_meta,
            children_per_meta: w.children_per_meta,
            embed_dim: w.embed_dim,
            data_dim: w.data_dim,
            spread: w.spread,
            radius: w.radius,
            offset_scale: w.offset_scale,
            records_per_concept: 3,
            target_groups: 5000,
            tau_min: w.tau_min,
            tau_max: w.tau_max,
            t_train: 1000,
            schedule: "linear".into(),
            n_steps: 30,
            hidden: vec![64, 64],
            activation: "silu".into(),
            loss: "sage".into(),
            lambda1: 1.0,
            lambda2: 1.0,
            min_snr_gamma: None,
            cfg_dropout: 0.1,
            soft_target_grad: false,
            pretrain_steps: 20_000,
            steps: 20_000,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_groups: 4,
            checkpoint_every: 0,
            beta: 0.3,
            betas: vec![0.2, 0.3, 0.4],
            threshold: w.tau_min,
            omega: 1.0,
            samples_per_prompt: 4,
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Parses one `--set` value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    /// File (if any), then `SAGE_SEED`, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| anyhow::Error::new(ConfigError(format!("{}: {e}", p.display()))))?
            }
            None => toml::Table::new(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            let seed: i64 = seed
                .trim()
                .parse()
                .map_err(|_| anyhow::Error::new(ConfigError(format!("{SEED_ENV}={seed} is not an integer"))))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        for item in overrides {
            let Some((k, v)) = item.split_once('=') else {
                bail!(ConfigError(format!("override '{item}' is not key=value")));
            };
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::Error::new(ConfigError(e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let fail = |m: String| Err(anyhow::Error::new(ConfigError(m)));
        if self.activation().is_none() {
            return fail(format!("unknown activation '{}'", self.activation));
        }
        self.loss_mode().map_err(|e| ConfigError(e.to_string()))?;
        if self.records_per_concept == 0 || self.samples_per_prompt == 0 || self.n_steps == 0 {
            return fail("records_per_concept, samples_per_prompt and n_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.beta) || self.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return fail("sharing ratios must lie in [0, 1]".into());
        }
        if !(self.omega >= 0.0) {
            return fail(format!("guidance scale {} must be non-negative", self.omega));
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            n_meta: self.n_meta,
            children_per_meta: self.children_per_meta,
            embed_dim: self.embed_dim,
            data_dim: self.data_dim,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            spread: self.spread,
            radius: self.radius,
            offset_scale: self.offset_scale,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        Activation::from_name(&self.activation)
    }

    pub fn loss_mode(&self) -> sage_core::Result<LossMode> {
        self.loss.parse()
    }

    pub fn guidance(&self) -> Guidance {
        Guidance::Constant(self.omega)
    }

    pub fn train_config(&self, mode: LossMode) -> sage_core::Result<TrainConfig> {
        let loss = SageLossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            weight: self.min_snr_gamma.map_or(TimeWeight::One, TimeWeight::MinSnr),
            cfg_dropout: self.cfg_dropout,
            soft_target_grad: self.soft_target_grad,
            ..SageLossConfig::for_beta(self.beta, self.t_train)?
        };
        Ok(TrainConfig {
            batch_groups: self.batch_groups,
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..TrainConfig::new(mode, loss)
        })
    }

    /// Hash of everything that determines the dataset files.
    pub fn data_hash(&self) -> String {
        digest(&json!({
            "stage": "data",
            "seed": self.seed,
            "world": self.world_params(),
            "records_per_concept": self.records_per_concept,
            "target_groups": self.target_groups,
        }))
    }

    /// Hash of a training run: data lineage, architecture, objective and the
    /// starting checkpoint (if any).
    pub fn train_hash(&self, mode: LossMode, steps: usize, run_seed: u64, init: Option<&str>) -> String {
        digest(&json!({
            "stage": "train",
            "data": self.data_hash(),
            "t_train": self.t_train,
            "schedule": self.schedule,
            "hidden": self.hidden,
            "activation": self.activation,
            "loss": mode.to_string(),
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "min_snr_gamma": self.min_snr_gamma,
            "cfg_dropout": self.cfg_dropout,
            "soft_target_grad": self.soft_target_grad,
            "beta": self.beta,
            "steps": steps,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "batch_groups": self.batch_groups,
            "run_seed": run_seed,
            "init": init,
        }))
    }

    /// Hash of a sampling run on top of a checkpoint hash.
    pub fn sample_hash(&self, checkpoint_hash: &str, scheme: &str, shared_steps: usize, run_seed: u64) -> String {
        digest(&json!({
            "stage": "sample",
            "checkpoint": checkpoint_hash,
            "scheme": scheme,
            "shared_steps": shared_steps,
            "n_steps": self.n_steps,
            "threshold": self.threshold,
            "omega": self.omega,
            "samples_per_prompt": self.samples_per_prompt,
            "run_seed": run_seed,
        }))
    }
}

pub fn digest(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json serializes");
    let hash = Sha256::digest(&bytes);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Invalid configuration or command-line input.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}
