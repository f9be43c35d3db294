//! Synthetic concept world standing in for captioned images.
//!
//! Concepts come in meta-concept families. A meta concept sits at a point
//! `p` in data space; its embedding mixes a position block (a gnomonic
//! projection of `p`, so nearby metas have similar embeddings) with a random
//! identity block. Children are slerp perturbations of the meta embedding,
//! with the angle found by bisection so that sibling cosines centre on the
//! requested window; each child's data mean is offset from `p` by an amount
//! proportional to its embedding distance from the meta.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};
use crate::grouping::{build_graph, cosine, enumerate_cliques, SimilarityGraph, DEFAULT_CLIQUE_CAP};
use crate::model::ConceptEmbedding;
use crate::numerics::linalg::{dist, dot, norm};
use crate::numerics::Rng;

/// Smallest slerp angle (radians) used to separate sibling embeddings.
pub const PERTURBATION_FLOOR: f64 = 0.05;
/// Weight of the position block in a meta embedding (squared norm share).
pub const POSITION_WEIGHT: f64 = 0.6;
/// Height of the gnomonic projection plane.
pub const GNOMONIC_HEIGHT: f64 = 1.0;
const META_RETRIES: usize = 200;
const FAMILY_RETRIES: usize = 50;
const REQUIRED_RATE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub n_meta: usize,
    pub children_per_meta: usize,
    pub embed_dim: usize,
    pub data_dim: usize,
    /// Window sibling cosines should land in.
    pub tau_min: f64,
    pub tau_max: f64,
    pub spread: f64,
    /// Meta means are uniform in a ball of this radius.
    pub radius: f64,
    /// Child mean offset per unit of embedding distance.
    pub offset_scale: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_meta: 200,
            children_per_meta: 3,
            embed_dim: 16,
            data_dim: 2,
            tau_min: 0.6,
            tau_max: 0.9,
            spread: 0.15,
            radius: 2.0,
            offset_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub meta: usize,
    pub embedding: ConceptEmbedding,
    pub mean: Vec<f64>,
    pub spread: f64,
}

/// The generated concepts plus everything needed to regenerate them; doubles
/// as the ground-truth oracle for metrics and optimal denoisers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub params: WorldParams,
    pub concepts: Vec<Concept>,
    #[serde(default)]
    pub config_hash: String,
}

pub type OracleWorld = World;

impl World {
    pub fn concept(&self, id: usize) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| SageError::format("world", e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| SageError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SageError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SageError::format("world", e.to_string()))
    }

    /// Fractions of sibling pairs inside the window and of cross-family
    /// pairs below `tau_min`.
    pub fn similarity_rates(&self) -> (Option<f64>, Option<f64>) {
        let (tmin, tmax) = (self.params.tau_min, self.params.tau_max);
        let (mut sib, mut sib_in, mut cross, mut cross_below) = (0usize, 0usize, 0usize, 0usize);
        for (i, a) in self.concepts.iter().enumerate() {
            for b in &self.concepts[i + 1..] {
                let c = dot(a.embedding.as_slice(), b.embedding.as_slice());
                if a.meta == b.meta {
                    sib += 1;
                    sib_in += usize::from(tmin < c && c < tmax);
                } else {
                    cross += 1;
                    cross_below += usize::from(c < tmin);
                }
            }
        }
        let rate = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
        (rate(sib_in, sib), rate(cross_below, cross))
    }

    /// Spearman correlation, over all concept pairs, between embedding
    /// cosine and negative distance of the data means.
    pub fn coupling(&self) -> f64 {
        let mut cos = Vec::new();
        let mut neg_dist = Vec::new();
        for (i, a) in self.concepts.iter().enumerate() {
            for b in &self.concepts[i + 1..] {
                cos.push(dot(a.embedding.as_slice(), b.embedding.as_slice()));
                neg_dist.push(-dist(&a.mean, &b.mean));
            }
        }
        spearman(&cos, &neg_dist)
    }
}

/// Average ranks (1-based), ties share the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn point_in_ball(rng: &mut Rng, dim: usize, radius: f64) -> Vec<f64> {
    let dir = rng.unit_vector(dim);
    let r = radius * rng.uniform().powf(1.0 / dim as f64);
    dir.into_iter().map(|x| x * r).collect()
}

fn meta_embedding(rng: &mut Rng, position: &[f64], embed_dim: usize) -> Vec<f64> {
    let mut pos: Vec<f64> = position.to_vec();
    pos.push(GNOMONIC_HEIGHT);
    let pn = norm(&pos);
    let identity = rng.unit_vector(embed_dim - pos.len());
    let (wp, wi) = (POSITION_WEIGHT.sqrt(), (1.0 - POSITION_WEIGHT).sqrt());
    pos.iter()
        .map(|x| wp * x / pn)
        .chain(identity.iter().map(|x| wi * x))
        .collect()
}

/// Slerp angle whose expected sibling cosine `cos^2(theta)` equals `target`.
fn bisect_angle(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid.cos().powi(2) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unit vector orthogonal to `axis`.
fn orthogonal_direction(rng: &mut Rng, axis: &[f64]) -> Vec<f64> {
    loop {
        let mut u = rng.gaussian(axis.len());
        let proj = dot(&u, axis);
        u.iter_mut().zip(axis).for_each(|(ui, a)| *ui -= proj * a);
        let n = norm(&u);
        if n > 1e-9 {
            return u.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn make_world(rng: &mut Rng, params: &WorldParams) -> Result<World> {
    let WorldParams {
        n_meta,
        children_per_meta,
        embed_dim,
        data_dim,
        tau_min,
        tau_max,
        spread,
        radius,
        offset_scale,
    } = *params;
    if n_meta == 0 || children_per_meta == 0 || data_dim == 0 {
        return Err(SageError::Config("world sizes must be positive".into()));
    }
    if embed_dim < data_dim + 2 {
        return Err(SageError::Config(format!(
            "embedding dimension {embed_dim} must be at least data dimension + 2"
        )));
    }
    if !(-1.0 < tau_min && tau_min < tau_max && tau_max <= 1.0) {
        return Err(SageError::Config(format!("invalid similarity window ({tau_min}, {tau_max})")));
    }
    if !(spread >= 0.0 && radius > 0.0 && offset_scale >= 0.0) {
        return Err(SageError::Config("spread, radius and offset scale must be non-negative".into()));
    }

    let theta = bisect_angle(0.5 * (tau_min + tau_max));
    if children_per_meta > 1 && theta < PERTURBATION_FLOOR {
        return Err(SageError::Generation(format!(
            "window ({tau_min}, {tau_max}) needs a slerp angle of {theta:.4} rad, below the floor {PERTURBATION_FLOOR}"
        )));
    }

    // Metas: rejection-sample so that earlier metas stay below tau_min.
    let mut metas: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..META_RETRIES {
            let p = point_in_ball(rng, data_dim, radius);
            let e = meta_embedding(rng, &p, embed_dim);
            let worst = metas
                .iter()
                .map(|(_, other)| dot(&e, other))
                .fold(f64::NEG_INFINITY, f64::max);
            let better = best.as_ref().is_none_or(|b| worst < b.0);
            if better {
                best = Some((worst, p, e));
            }
            if worst < tau_min {
                break;
            }
        }
        let (_, p, e) = best.expect("at least one attempt");
        metas.push((p, e));
    }

    let mut concepts = Vec::with_capacity(n_meta * children_per_meta);
    for (meta_id, (p, e)) in metas.iter().enumerate() {
        let mut family = Vec::new();
        for _ in 0..FAMILY_RETRIES {
            family = (0..children_per_meta)
                .map(|_| {
                    let u = orthogonal_direction(rng, e);
                    let child: Vec<f64> = e
                        .iter()
                        .zip(&u)
                        .map(|(a, b)| theta.cos() * a + theta.sin() * b)
                        .collect();
                    (child, u)
                })
                .collect::<Vec<_>>();
            let all_in = family.iter().enumerate().all(|(i, (a, _))| {
                family[i + 1..].iter().all(|(b, _)| {
                    let c = dot(a, b);
                    tau_min < c && c < tau_max
                })
            });
            if all_in {
                break;
            }
        }
        if children_per_meta == 1 {
            // A lone child has no siblings to separate from; it is its meta.
            family = vec![(e.clone(), vec![0.0; embed_dim])];
        }
        for (child, u) in family {
            let embedding = ConceptEmbedding::normalized(child)?;
            let step = offset_scale * dist(embedding.as_slice(), e);
            let head = &u[..data_dim];
            let hn = norm(head);
            let mean = if hn > 1e-12 {
                p.iter().zip(head).map(|(pi, h)| pi + step * h / hn).collect()
            } else {
                p.clone()
            };
            concepts.push(Concept {
                id: concepts.len(),
                meta: meta_id,
                embedding,
                mean,
                spread,
            });
        }
    }

    let world = World {
        seed: rng.seed(),
        params: params.clone(),
        concepts,
        config_hash: String::new(),
    };
    let (sibling_rate, cross_rate) = world.similarity_rates();
    if let Some(r) = sibling_rate.filter(|&r| r < REQUIRED_RATE) {
        return Err(SageError::Generation(format!(
            "only {:.1}% of sibling pairs fall inside ({tau_min}, {tau_max})",
            100.0 * r
        )));
    }
    if let Some(r) = cross_rate.filter(|&r| r < REQUIRED_RATE) {
        return Err(SageError::Generation(format!(
            "only {:.1}% of cross-family pairs fall below tau_min = {tau_min}",
            100.0 * r
        )));
    }
    Ok(world)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: usize,
    pub concept_id: usize,
    pub embedding: ConceptEmbedding,
    pub x: Vec<f64>,
}

/// `per_concept` draws from each concept's Gaussian, concept by concept.
pub fn sample_records(rng: &mut Rng, world: &World, per_concept: usize) -> Vec<Record> {
    let mut out = Vec::with_capacity(world.concepts.len() * per_concept);
    for concept in &world.concepts {
        for _ in 0..per_concept {
            let noise = rng.gaussian(concept.mean.len());
            let x = concept
                .mean
                .iter()
                .zip(&noise)
                .map(|(m, n)| m + concept.spread * n)
                .collect();
            out.push(Record {
                record_id: out.len(),
                concept_id: concept.id,
                embedding: concept.embedding.clone(),
                x,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tau_min: f64,
    pub tau_max: f64,
    pub seed: u64,
    pub world: WorldParams,
    pub target_groups: usize,
    pub total_cliques: usize,
    pub warning: Option<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub records: Vec<Record>,
    /// Record ids, ascending within each group.
    pub groups: Vec<Vec<usize>>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceLine {
    provenance: Provenance,
}

impl GroupedDataset {
    pub fn embeddings(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.embedding.as_slice()).collect()
    }

    pub fn graph(&self) -> Result<SimilarityGraph> {
        build_graph(&self.embeddings(), self.provenance.tau_min, self.provenance.tau_max)
    }

    pub fn size_histogram(&self) -> Vec<(usize, usize)> {
        let mut hist = std::collections::BTreeMap::new();
        for g in &self.groups {
            *hist.entry(g.len()).or_insert(0) += 1;
        }
        hist.into_iter().collect()
    }

    /// Writes the records file (provenance line first) and the groups file.
    pub fn write(&self, records_path: &Path, groups_path: &Path, threshold: f64) -> Result<()> {
        let file = fs::File::create(records_path).map_err(|e| SageError::io(records_path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e: std::io::Error| SageError::io(records_path, e);
        let json = |e: serde_json::Error| SageError::format("records", e.to_string());
        let head = ProvenanceLine {
            provenance: self.provenance.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&head).map_err(json)?).map_err(io)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).map_err(json)?).map_err(io)?;
        }
        w.flush().map_err(io)?;
        crate::grouping::GroupsFile {
            tau_min: self.provenance.tau_min,
            tau_max: self.provenance.tau_max,
            threshold,
            config_hash: self.provenance.config_hash.clone(),
            groups: self.groups.clone(),
        }
        .write(groups_path)
    }

    pub fn read(records_path: &Path, groups_path: &Path) -> Result<Self> {
        let file = fs::File::open(records_path).map_err(|e| SageError::io(records_path, e))?;
        let mut lines = BufReader::new(file).lines();
        let json = |e: serde_json::Error| SageError::format("records", e.to_string());
        let first = lines
            .next()
            .ok_or_else(|| SageError::format("records", "empty file"))?
            .map_err(|e| SageError::io(records_path, e))?;
        let provenance = serde_json::from_str::<ProvenanceLine>(&first).map_err(json)?.provenance;
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| SageError::io(records_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<Record>(&line).map_err(json)?);
        }
        if let Some((i, r)) = records.iter().enumerate().find(|(i, r)| r.record_id != *i) {
            return Err(SageError::format(
                "records",
                format!("record at line {} has id {}", i + 2, r.record_id),
            ));
        }
        let groups = crate::grouping::GroupsFile::read(groups_path)?.groups;
        if let Some(bad) = groups.iter().flatten().find(|&&m| m >= records.len()) {
            return Err(SageError::format("groups file", format!("unknown record id {bad}")));
        }
        Ok(Self {
            records,
            groups,
            provenance,
        })
    }
}

/// Enumerates cliques of the record similarity graph and stride-samples
/// `target_groups` of them from the canonical order.
pub fn build_grouped_dataset(
    records: Vec<Record>,
    tau_min: f64,
    tau_max: f64,
    target_groups: usize,
    seed: u64,
    world: &WorldParams,
) -> Result<GroupedDataset> {
    if records.is_empty() {
        return Err(SageError::Config("no records to group".into()));
    }
    let embeddings: Vec<&[f64]> = records.iter().map(|r| r.embedding.as_slice()).collect();
    let graph = build_graph(&embeddings, tau_min, tau_max)?;
    let cliques = enumerate_cliques(&graph, 2, 5, DEFAULT_CLIQUE_CAP);
    let total = cliques.len();
    let (groups, warning) = if total <= target_groups {
        let warning = (total < target_groups)
            .then(|| format!("only {total} cliques available for {target_groups} requested groups"));
        (cliques, warning)
    } else {
        let picked = (0..target_groups)
            .map(|i| cliques[i * total / target_groups].clone())
            .collect();
        (picked, None)
    };
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(GroupedDataset {
        records,
        groups,
        provenance: Provenance {
            tau_min,
            tau_max,
            seed,
            world: world.clone(),
            target_groups,
            total_cliques: total,
            warning,
            config_hash: String::new(),
        },
    })
}

/// Checks every group against a freshly built graph.
pub fn validate_groups(dataset: &GroupedDataset) -> Result<bool> {
    let graph = dataset.graph()?;
    Ok(dataset
        .groups
        .iter()
        .all(|g| (2..=5).contains(&g.len()) && graph.is_clique(g)))
}

/// Cosine between two records' embeddings.
pub fn record_similarity(a: &Record, b: &Record) -> Result<f64> {
    cosine(a.embedding.as_slice(), b.embedding.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> WorldParams {
        WorldParams {
            n_meta: 20,
            ..WorldParams::default()
        }
    }

    #[test]
    fn default_world_meets_similarity_targets() {
        let world = make_world(&mut Rng::new(1, 0), &WorldParams { n_meta: 50, ..Default::default() }).unwrap();
        let (sib, cross) = world.similarity_rates();
        assert!(sib.unwrap() >= 0.95, "sibling rate {sib:?}");
        assert!(cross.unwrap() >= 0.95, "cross rate {cross:?}");
        for c in &world.concepts {
            assert!((norm(c.embedding.as_slice()) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn default_world_couples_embeddings_to_means() {
        for seed in [1, 2, 3] {
            let world = make_world(&mut Rng::new(seed, 0), &WorldParams::default()).unwrap();
            let rho = world.coupling();
            assert!(rho > 0.5, "seed {seed}: spearman {rho}");
        }
    }

    #[test]
    fn siblings_are_closer_than_strangers() {
        let world = make_world(&mut Rng::new(2, 0), &small_params()).unwrap();
        let (mut sib, mut cross) = (Vec::new(), Vec::new());
        for (i, a) in world.concepts.iter().enumerate() {
            for b in &world.concepts[i + 1..] {
                let c = dot(a.embedding.as_slice(), b.embedding.as_slice());
                if a.meta == b.meta { sib.push(c) } else { cross.push(c) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&sib) > mean(&cross));
    }

    #[test]
    fn single_child_families_give_no_cliques() {
        let params = WorldParams { children_per_meta: 1, ..small_params() };
        let world = make_world(&mut Rng::new(3, 0), &params).unwrap();
        let records = sample_records(&mut Rng::new(3, 1), &world, 1);
        let ds = build_grouped_dataset(records, 0.6, 0.9, 10, 3, &params).unwrap();
        assert!(ds.groups.is_empty());
        assert!(ds.provenance.warning.is_some());
    }

    #[test]
    fn infeasible_window_is_an_error() {
        let params = WorldParams { tau_min: 0.999, tau_max: 1.0, ..small_params() };
        assert!(matches!(make_world(&mut Rng::new(4, 0), &params), Err(SageError::Generation(_))));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = make_world(&mut Rng::new(5, 0), &small_params()).unwrap();
        let b = make_world(&mut Rng::new(5, 0), &small_params()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_spread_records_sit_on_means() {
        let params = WorldParams { spread: 0.0, ..small_params() };
        let world = make_world(&mut Rng::new(6, 0), &params).unwrap();
        for r in sample_records(&mut Rng::new(6, 1), &world, 2) {
            assert_eq!(r.x, world.concepts[r.concept_id].mean);
        }
    }

    #[test]
    fn record_sampling_is_deterministic() {
        let world = make_world(&mut Rng::new(7, 0), &small_params()).unwrap();
        let a = sample_records(&mut Rng::new(7, 1), &world, 3);
        let b = sample_records(&mut Rng::new(7, 1), &world, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let world = make_world(&mut Rng::new(8, 0), &WorldParams { n_meta: 1, children_per_meta: 1, ..Default::default() }).unwrap();
        let n = 100_000;
        let records = sample_records(&mut Rng::new(8, 1), &world, n);
        let c = &world.concepts[0];
        for k in 0..2 {
            let m = records.iter().map(|r| r.x[k]).sum::<f64>() / n as f64;
            assert!((m - c.mean[k]).abs() <= 3.0 * c.spread / (n as f64).sqrt(), "coord {k}");
        }
    }

    #[test]
    fn three_siblings_form_four_cliques() {
        // One family of three, one record each: brute force over the 2^3
        // subsets gives {01, 012, 02, 12}.
        let params = WorldParams { n_meta: 1, ..Default::default() };
        let world = make_world(&mut Rng::new(9, 0), &params).unwrap();
        let records = sample_records(&mut Rng::new(9, 1), &world, 1);
        let ds = build_grouped_dataset(records, 0.6, 0.9, 100, 9, &params).unwrap();
        assert_eq!(ds.groups, vec![vec![0, 1], vec![0, 1, 2], vec![0, 2], vec![1, 2]]);
        assert!(validate_groups(&ds).unwrap());
    }

    #[test]
    fn stride_sampling_hits_target() {
        let world = make_world(&mut Rng::new(10, 0), &small_params()).unwrap();
        let records = sample_records(&mut Rng::new(10, 1), &world, 3);
        let ds = build_grouped_dataset(records, 0.6, 0.9, 50, 10, &small_params()).unwrap();
        assert_eq!(ds.groups.len(), 50);
        assert!(ds.provenance.total_cliques > 50);
        assert!(ds.provenance.warning.is_none());
        assert!(validate_groups(&ds).unwrap());
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let world = make_world(&mut Rng::new(11, 0), &small_params()).unwrap();
        let records = sample_records(&mut Rng::new(11, 1), &world, 2);
        let ds = build_grouped_dataset(records, 0.6, 0.9, 20, 11, &small_params()).unwrap();
        let (rp, gp) = (dir.path().join("records.jsonl"), dir.path().join("groups.txt"));
        ds.write(&rp, &gp, 0.6).unwrap();
        assert_eq!(GroupedDataset::read(&rp, &gp).unwrap(), ds);
        let wp = dir.path().join("world.json");
        world.write(&wp).unwrap();
        assert_eq!(World::read(&wp).unwrap(), world);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
