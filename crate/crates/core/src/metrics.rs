//! Toy analogs of FID, CLIP score and LPIPS diversity, plus report files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Concept, Record, World};
use crate::error::{Result, SageError};
use crate::numerics::linalg::{dist, sq_dist};
use crate::sampling::{CostReport, SampleRecord};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

impl GaussianFit {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(SageError::Shape(format!("covariance {:?} for a {d}-dim mean", covariance.shape())));
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > SYMMETRY_TOL * (1.0 + covariance.abs().max()) {
            return Err(SageError::NonFinite(format!("covariance asymmetric by {asym:e}")));
        }
        let min_eig = min_eigenvalue(&covariance);
        if min_eig < -PSD_TOL {
            return Err(SageError::NotPsd { min_eig });
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
        })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Self {
        let d = mean.len();
        Self {
            mean: DVector::from_vec(mean),
            covariance: DMatrix::identity(d, d) * variance,
        }
    }

    /// Maximum-likelihood fit (divides by the total weight).
    pub fn fit_weighted<V: AsRef<[f64]>>(points: &[V], weights: &[f64]) -> Result<Self> {
        assert_eq!(points.len(), weights.len());
        if points.is_empty() {
            return Err(SageError::Shape("cannot fit a Gaussian to no points".into()));
        }
        let d = points[0].as_ref().len();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(SageError::Config("fit weights must sum to a positive value".into()));
        }
        let mut mean = DVector::zeros(d);
        for (p, w) in points.iter().zip(weights) {
            mean += DVector::from_column_slice(p.as_ref()) * (*w / total);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (p, w) in points.iter().zip(weights) {
            let r = DVector::from_column_slice(p.as_ref()) - &mean;
            cov += &r * r.transpose() * (*w / total);
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean.iter().cloned().collect(), cov)
    }

    pub fn fit<V: AsRef<[f64]>>(points: &[V]) -> Result<Self> {
        Self::fit_weighted(points, &vec![1.0; points.len()])
    }

    /// Exact moments of a mixture of the world's concept Gaussians.
    pub fn of_mixture(concepts: &[(&Concept, f64)]) -> Result<Self> {
        if concepts.is_empty() {
            return Err(SageError::Shape("empty mixture".into()));
        }
        let d = concepts[0].0.mean.len();
        let total: f64 = concepts.iter().map(|(_, w)| w).sum();
        let mut mean = DVector::zeros(d);
        for (c, w) in concepts {
            mean += DVector::from_column_slice(&c.mean) * (*w / total);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (c, w) in concepts {
            let r = DVector::from_column_slice(&c.mean) - &mean;
            cov += (&r * r.transpose() + DMatrix::identity(d, d) * c.spread * c.spread) * (*w / total);
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean.iter().cloned().collect(), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric PSD square root with eigenvalues clamped at zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL * (1.0 + m.abs().max()) {
        return Err(SageError::NotPsd { min_eig });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, the trace of the
/// root taken as `tr((A^(1/2) S_b A^(1/2))^(1/2))`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(SageError::Shape(format!("fits have dimensions {} and {}", a.dim(), b.dim())));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.covariance)?;
    let inner = &root_a * &b.covariance * &root_a;
    let cross = psd_sqrt(&inner)?.trace();
    let value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(SageError::NonFinite("frechet distance".into()));
    }
    Ok(value.max(0.0))
}

/// Mean of `exp(-|x - mean|^2 / (2 spread^2))`; with zero spread a sample
/// scores 1 only on an exact hit.
pub fn alignment_score<V: AsRef<[f64]>>(samples: &[V], concept: &Concept) -> Result<f64> {
    if samples.is_empty() {
        return Err(SageError::Shape("alignment needs at least one sample".into()));
    }
    let v = concept.spread * concept.spread;
    let total: f64 = samples
        .iter()
        .map(|x| {
            let r2 = sq_dist(x.as_ref(), &concept.mean);
            if v == 0.0 {
                f64::from(u8::from(r2 == 0.0))
            } else {
                (-r2 / (2.0 * v)).exp()
            }
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Expected alignment for samples from `N(mean, s^2 I)` in `d` dimensions.
pub fn expected_alignment(s: f64, spread: f64, d: usize) -> f64 {
    (spread * spread / (spread * spread + s * s)).powf(d as f64 / 2.0)
}

/// Mean pairwise distance inside each group of at least two samples,
/// averaged over those groups.
pub fn diversity<V: AsRef<[f64]>>(groups: &[Vec<V>]) -> Option<f64> {
    let per_group: Vec<f64> = groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let n = g.len();
            let mut sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    sum += dist(g[i].as_ref(), g[j].as_ref());
                }
            }
            2.0 * sum / (n * (n - 1)) as f64
        })
        .collect();
    (!per_group.is_empty()).then(|| per_group.iter().sum::<f64>() / per_group.len() as f64)
}

/// One row of the report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub scheme: String,
    pub beta: f64,
    pub frechet: Option<f64>,
    pub alignment: Option<f64>,
    pub diversity: Option<f64>,
    pub cost_saving: Option<f64>,
}

/// Settings echoed on the report's comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigEcho {
    pub tau_min: f64,
    pub tau_max: f64,
    pub omega: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub echo: ConfigEcho,
    pub rows: Vec<MetricsReport>,
}

impl ReportTable {
    pub fn to_csv(&self) -> Result<String> {
        let e = &self.echo;
        let seeds: Vec<String> = e.seeds.iter().map(u64::to_string).collect();
        let mut out = format!(
            "# tau_min={:?} tau_max={:?} omega={} seeds={} config_hash={}\n",
            e.tau_min,
            e.tau_max,
            e.omega,
            seeds.join(";"),
            e.config_hash
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        w.write_record(["model", "scheme", "beta", "frechet", "alignment", "diversity", "cost_saving"])
            .map_err(|e| SageError::format("report", e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.scheme.clone(),
                format!("{:?}", r.beta),
                fmt(r.frechet),
                fmt(r.alignment),
                fmt(r.diversity),
                fmt(r.cost_saving),
            ])
            .map_err(|e| SageError::format("report", e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| SageError::format("report", e.to_string()))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: String| SageError::format("report", d);
        let (head, body) = text.split_once('\n').ok_or_else(|| bad("missing header".into()))?;
        let fields = head
            .strip_prefix("# ")
            .ok_or_else(|| bad("missing config comment line".into()))?;
        let mut echo = ConfigEcho::default();
        for kv in fields.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed field '{kv}'")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "tau_min" => echo.tau_min = num(v)?,
                "tau_max" => echo.tau_max = num(v)?,
                "omega" => echo.omega = v.to_string(),
                "seeds" => {
                    echo.seeds = v
                        .split(';')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|e| bad(format!("seed '{s}': {e}"))))
                        .collect::<Result<_>>()?
                }
                "config_hash" => echo.config_hash = v.to_string(),
                other => return Err(bad(format!("unknown field '{other}'"))),
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let expected = ["model", "scheme", "beta", "frechet", "alignment", "diversity", "cost_saving"];
        if header.iter().ne(expected.iter().copied()) {
            return Err(bad(format!("unexpected columns {header:?}")));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsReport>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        Ok(Self { echo, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| SageError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SageError::io(path, e))?;
        Self::parse(&text)
    }
}

/// Reference points for the prompts present in `samples`: every record of
/// each sampled concept, weighted so each concept carries as much mass as
/// it has samples.
fn reference_population<'a>(samples: &[SampleRecord], records: &'a [Record]) -> Option<(Vec<&'a [f64]>, Vec<f64>)> {
    let mut wanted: BTreeMap<usize, usize> = BTreeMap::new();
    for s in samples {
        *wanted.entry(s.prompt_id).or_default() += 1;
    }
    let mut available: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| wanted.contains_key(&r.concept_id)) {
        *available.entry(r.concept_id).or_default() += 1;
    }
    if available.len() != wanted.len() {
        return None;
    }
    let (points, weights) = records
        .iter()
        .filter(|r| wanted.contains_key(&r.concept_id))
        .map(|r| (r.x.as_slice(), wanted[&r.concept_id] as f64 / available[&r.concept_id] as f64))
        .unzip();
    Some((points, weights))
}

/// Fills a report row from generated samples. Fields whose reference data
/// is missing are left absent.
pub fn evaluate(
    samples: &[SampleRecord],
    reference: &[Record],
    world: &World,
    cost: Option<&CostReport>,
) -> Result<(Option<f64>, Option<f64>, Option<f64>, Option<f64>)> {
    if samples.is_empty() {
        return Err(SageError::Config("no samples to evaluate".into()));
    }
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.x0.as_slice()).collect();
    let frechet = match reference_population(samples, reference) {
        Some((points, weights)) => {
            let gen = GaussianFit::fit(&xs)?;
            let refit = GaussianFit::fit_weighted(&points, &weights)?;
            Some(frechet_distance(&gen, &refit)?)
        }
        None => None,
    };

    let mut by_prompt: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for s in samples {
        by_prompt.entry(s.prompt_id).or_default().push(&s.x0);
    }
    let mut scores = Vec::with_capacity(by_prompt.len());
    for (id, xs) in &by_prompt {
        match world.concept(*id) {
            Some(c) => scores.push(alignment_score(xs, c)?),
            None => {
                scores.clear();
                break;
            }
        }
    }
    let alignment = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);

    let mut by_group: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for s in samples {
        by_group.entry(s.group_id).or_default().push(&s.x0);
    }
    let groups: Vec<Vec<&[f64]>> = by_group.into_values().collect();
    Ok((frechet, alignment, diversity(&groups), cost.map(|c| c.saving_ratio)))
}

/// `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut choose = 1.0;
    for k in 0..=n {
        if k >= wins {
            p += choose;
        }
        choose = choose * (n - k) as f64 / (k + 1) as f64;
    }
    p / 2f64.powi(n as i32)
}
