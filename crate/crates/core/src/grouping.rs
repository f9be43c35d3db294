//! Similarity graphs over prompt embeddings, clique enumeration for dataset
//! construction and first-fit partitioning for inference batches.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SageError};
use crate::model::centroid;
use crate::numerics::linalg::{dot, norm};

/// Default limit on the number of cliques emitted.
pub const DEFAULT_CLIQUE_CAP: usize = 1_000_000;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SageError::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(SageError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Undirected graph with an edge wherever `tau_min < cos < tau_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    adjacency: Vec<bool>,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl SimilarityGraph {
    /// Graph from an explicit adjacency predicate; used by tests and by
    /// [`build_graph`].
    pub fn from_fn(n: usize, tau_min: f64, tau_max: f64, mut edge: impl FnMut(usize, usize) -> bool) -> Self {
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if edge(i, j) {
                    adjacency[i * n + j] = true;
                    adjacency[j * n + i] = true;
                }
            }
        }
        Self {
            n,
            adjacency,
            tau_min,
            tau_max,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&e| e).count() / 2
    }

    /// Neighbours of `i` with a larger index, ascending.
    fn forward_neighbours(&self, i: usize) -> Vec<usize> {
        ((i + 1)..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn is_clique(&self, members: &[usize]) -> bool {
        members
            .iter()
            .enumerate()
            .all(|(k, &a)| members[k + 1..].iter().all(|&b| a != b && self.has_edge(a, b)))
    }
}

pub fn build_graph<E: AsRef<[f64]>>(embeddings: &[E], tau_min: f64, tau_max: f64) -> Result<SimilarityGraph> {
    if !(tau_min < tau_max) {
        return Err(SageError::Config(format!(
            "similarity window needs tau_min < tau_max, got ({tau_min}, {tau_max})"
        )));
    }
    let n = embeddings.len();
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            sims[i * n + j] = cosine(embeddings[i].as_ref(), embeddings[j].as_ref())?;
        }
    }
    Ok(SimilarityGraph::from_fn(n, tau_min, tau_max, |i, j| {
        let s = sims[i * n + j];
        tau_min < s && s < tau_max
    }))
}

/// All cliques with `min_size <= |C| <= max_size`, each once with members
/// ascending, in lexicographic order of the member lists, truncated after
/// `cap` entries.
///
/// Cliques are grown by ordered extension: a clique is only extended by
/// common neighbours larger than its last member, so every clique has exactly
/// one derivation and depth-first preorder is lexicographic order.
pub fn enumerate_cliques(graph: &SimilarityGraph, min_size: usize, max_size: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if max_size == 0 || min_size > max_size || cap == 0 {
        return out;
    }
    let mut current = Vec::with_capacity(max_size);
    for v in 0..graph.node_count() {
        current.push(v);
        let candidates = graph.forward_neighbours(v);
        if !extend(graph, &mut current, &candidates, min_size, max_size, cap, &mut out) {
            break;
        }
        current.pop();
    }
    out
}

/// Returns false once the cap is reached.
fn extend(
    graph: &SimilarityGraph,
    current: &mut Vec<usize>,
    candidates: &[usize],
    min_size: usize,
    max_size: usize,
    cap: usize,
    out: &mut Vec<Vec<usize>>,
) -> bool {
    if current.len() >= min_size {
        out.push(current.clone());
        if out.len() >= cap {
            return false;
        }
    }
    if current.len() == max_size {
        return true;
    }
    for (k, &next) in candidates.iter().enumerate() {
        let narrowed: Vec<usize> = candidates[k + 1..]
            .iter()
            .copied()
            .filter(|&u| graph.has_edge(next, u))
            .collect();
        current.push(next);
        let keep_going = extend(graph, current, &narrowed, min_size, max_size, cap, out);
        current.pop();
        if !keep_going {
            return false;
        }
    }
    true
}

/// A batch of prompts that share early sampling steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGroup {
    /// Indices into the prompt list.
    pub members: Vec<usize>,
    /// Mean of the member embeddings.
    pub centroid: Vec<f64>,
    /// Per-group sharing ratio; `None` uses the grid's branch point.
    pub beta: Option<f64>,
}

impl PromptGroup {
    pub fn new<E: AsRef<[f64]>>(members: Vec<usize>, embeddings: &[E]) -> Self {
        let picked: Vec<&[f64]> = members.iter().map(|&m| embeddings[m].as_ref()).collect();
        Self {
            centroid: centroid(&picked),
            members,
            beta: None,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// First-fit grouping: each prompt joins the earliest group whose members
/// all have cosine at least `threshold` with it, otherwise opens a group.
pub fn greedy_partition<E: AsRef<[f64]>>(embeddings: &[E], threshold: f64) -> Result<Vec<PromptGroup>> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(SageError::Config(format!("threshold must lie in (-1, 1), got {threshold}")));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    'prompts: for i in 0..embeddings.len() {
        for g in groups.iter_mut() {
            let mut fits = true;
            for &m in g.iter() {
                if cosine(embeddings[i].as_ref(), embeddings[m].as_ref())? < threshold {
                    fits = false;
                    break;
                }
            }
            if fits {
                g.push(i);
                continue 'prompts;
            }
        }
        // Validates the embedding even when it ends up alone.
        if norm(embeddings[i].as_ref()) == 0.0 {
            return Err(SageError::ZeroVector);
        }
        groups.push(vec![i]);
    }
    Ok(groups
        .into_iter()
        .map(|members| PromptGroup::new(members, embeddings))
        .collect())
}

/// Contents of a `groups.txt` file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupsFile {
    pub tau_min: f64,
    pub tau_max: f64,
    pub threshold: f64,
    pub config_hash: String,
    pub groups: Vec<Vec<usize>>,
}

impl GroupsFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# groups tau_min={:?} tau_max={:?} threshold={:?} config_hash={}",
            self.tau_min, self.tau_max, self.threshold, self.config_hash
        );
        for g in &self.groups {
            let ids: Vec<String> = g.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(out, "{}", ids.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: String| SageError::format("groups file", d);
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# groups "))
            .ok_or_else(|| bad("missing '# groups' header".into()))?;
        let mut tau_min = None;
        let mut tau_max = None;
        let mut threshold = None;
        let mut config_hash = None;
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad header token '{kv}'")))?;
            let num = || v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "tau_min" => tau_min = Some(num()?),
                "tau_max" => tau_max = Some(num()?),
                "threshold" => threshold = Some(num()?),
                "config_hash" => config_hash = Some(v.to_string()),
                _ => return Err(bad(format!("unknown header key '{k}'"))),
            }
        }
        let mut groups = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ids = line
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?;
            groups.push(ids);
        }
        Ok(Self {
            tau_min: tau_min.ok_or_else(|| bad("header lacks tau_min".into()))?,
            tau_max: tau_max.ok_or_else(|| bad("header lacks tau_max".into()))?,
            threshold: threshold.ok_or_else(|| bad("header lacks threshold".into()))?,
            config_hash: config_hash.unwrap_or_default(),
            groups,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| SageError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SageError::io(path, e))?;
        Self::parse(&text)
    }
}
