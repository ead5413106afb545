//! Label propagation of preference ratios over a player-similarity graph, and
//! least-confidence selection of players for re-labelling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::PlayerId;
use crate::error::{Error, Result};
use crate::features::{l2_norm, Channel, Features};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrize {
    /// Keep an edge only when each end is among the other's nearest neighbours.
    Mutual,
    /// Keep an edge when either end lists the other.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub k: usize,
    pub sigma: f64,
    pub symmetrize: Symmetrize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            k: 10,
            sigma: 0.5,
            symmetrize: Symmetrize::Mutual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    players: Vec<PlayerId>,
    /// Symmetric weighted adjacency, sorted by neighbour index.
    adj: Vec<Vec<(usize, f64)>>,
    component: Vec<usize>,
}

impl SimilarityGraph {
    /// Graph over `players` from undirected weighted edges.
    pub fn from_edges(
        players: impl IntoIterator<Item = PlayerId>,
        edges: impl IntoIterator<Item = (PlayerId, PlayerId, f64)>,
    ) -> Result<Self> {
        let mut players: Vec<PlayerId> = players.into_iter().collect();
        players.sort();
        players.dedup();
        let index: BTreeMap<PlayerId, usize> = players.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); players.len()];
        for (a, b, w) in edges {
            let i = *index.get(&a).ok_or(Error::UnknownPlayer(a))?;
            let j = *index.get(&b).ok_or(Error::UnknownPlayer(b))?;
            if i == j || !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad similarity edge {a}-{b} ({w})")));
            }
            adj[i].insert(j, w);
            adj[j].insert(i, w);
        }
        let adj: Vec<Vec<(usize, f64)>> = adj.into_iter().map(|m| m.into_iter().collect()).collect();
        let component = components(&adj);
        Ok(SimilarityGraph {
            players,
            adj,
            component,
        })
    }

    pub fn players(&self) -> &[PlayerId] {
        &self.players
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }

    pub fn index_of(&self, p: PlayerId) -> Option<usize> {
        self.players.binary_search(&p).ok()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (PlayerId, PlayerId, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(move |(i, l)| {
            l.iter()
                .filter(move |(j, _)| *j > i)
                .map(move |(j, w)| (self.players[i], self.players[*j], *w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn weight(&self, a: PlayerId, b: PlayerId) -> f64 {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.adj[i]
                .binary_search_by_key(&j, |(k, _)| *k)
                .map_or(0.0, |k| self.adj[i][k].1),
            _ => 0.0,
        }
    }

    /// Connected-component label per player, numbered by first member.
    pub fn components(&self) -> &[usize] {
        &self.component
    }

    pub fn component_count(&self) -> usize {
        self.component.iter().max().map_or(0, |m| m + 1)
    }
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for s in 0..adj.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &(u, _) in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Concatenation of a player's per-channel vectors, each scaled to unit length.
pub fn propagation_vector(features: &Features, idx: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for c in Channel::ALL {
        let row = features.matrix(c).row(idx);
        let n = l2_norm(row);
        v.extend(row.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }));
    }
    v
}

/// kNN graph over `group` with weights `exp(-(1 - cos) / sigma)`.
pub fn build_similarity_graph(
    group: &BTreeSet<PlayerId>,
    features: &Features,
    cfg: &SimilarityConfig,
) -> Result<SimilarityGraph> {
    if group.len() < 2 {
        return Err(Error::InvalidArgument("similarity graph needs at least 2 players".into()));
    }
    if !(cfg.sigma > 0.0) || cfg.k == 0 {
        return Err(Error::InvalidConfig(format!("invalid similarity config {cfg:?}")));
    }
    let players: Vec<PlayerId> = group.iter().copied().collect();
    let vectors = players
        .iter()
        .map(|p| features.require(*p).map(|i| propagation_vector(features, i)))
        .collect::<Result<Vec<_>>>()?;
    let n = players.len();
    let norms: Vec<f64> = vectors.iter().map(|v| l2_norm(v)).collect();
    let cos = |i: usize, j: usize| -> f64 {
        let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
        crate::features::cosine_from_parts(dot, norms[i], norms[j])
    };
    let k = cfg.k.min(n - 1);
    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = cos(i, j);
            sims[i][j] = c;
            sims[j][i] = c;
        }
    }
    let knn: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| sims[i][b].total_cmp(&sims[i][a]).then(a.cmp(&b)));
            others.truncate(k);
            others.into_iter().collect()
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let keep = match cfg.symmetrize {
                Symmetrize::Mutual => knn[i].contains(&j) && knn[j].contains(&i),
                Symmetrize::Union => knn[i].contains(&j) || knn[j].contains(&i),
            };
            if keep {
                let w = (-(1.0 - sims[i][j]) / cfg.sigma).exp().max(f64::MIN_POSITIVE);
                edges.push((players[i], players[j], w));
            }
        }
    }
    SimilarityGraph::from_edges(players, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            alpha: 0.85,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerAssignment {
    pub player: PlayerId,
    /// Probability per ratio, in [`PropagationResult::ratio_ids`] order.
    pub probabilities: Vec<f64>,
    pub assigned: String,
    pub uncertainty: f64,
    pub labeled: bool,
}

impl PlayerAssignment {
    pub fn max_probability(&self) -> f64 {
        1.0 - self.uncertainty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub ratio_ids: Vec<String>,
    pub players: Vec<PlayerAssignment>,
    pub converged: bool,
    pub iterations: usize,
}

impl PropagationResult {
    pub fn get(&self, p: PlayerId) -> Option<&PlayerAssignment> {
        self.players
            .binary_search_by_key(&p, |a| a.player)
            .ok()
            .map(|i| &self.players[i])
    }

    pub fn probability(&self, p: PlayerId, ratio_id: &str) -> Option<f64> {
        let k = self.ratio_ids.iter().position(|r| r == ratio_id)?;
        self.get(p).map(|a| a.probabilities[k])
    }

    pub fn assignment(&self) -> BTreeMap<PlayerId, String> {
        self.players.iter().map(|a| (a.player, a.assigned.clone())).collect()
    }

    pub fn mean_max_probability(&self) -> f64 {
        self.players.iter().map(PlayerAssignment::max_probability).sum::<f64>() / self.players.len().max(1) as f64
    }
}

/// Row-normalised copy of `f`; all-zero rows become uniform.
fn normalize_rows(f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    f.iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|v| v / s).collect()
            } else {
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect()
}

pub fn propagate(
    g: &SimilarityGraph,
    labels: &BTreeMap<PlayerId, String>,
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    propagate_observed(g, labels, cfg, |_, _| {})
}

/// [`propagate`], calling `observer(iteration, normalised rows)` after every
/// iteration.
pub fn propagate_observed(
    g: &SimilarityGraph,
    labels: &BTreeMap<PlayerId, String>,
    cfg: &PropagationConfig,
    mut observer: impl FnMut(usize, &[Vec<f64>]),
) -> Result<PropagationResult> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("propagation needs at least one labelled player".into()));
    }
    if !(0.0..1.0).contains(&cfg.alpha) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("invalid propagation config {cfg:?}")));
    }
    let ratio_ids: Vec<String> = labels.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let r = ratio_ids.len();
    let n = g.len();
    let mut y = vec![vec![0.0; r]; n];
    let mut clamped = vec![false; n];
    for (p, ratio) in labels {
        let i = g.index_of(*p).ok_or(Error::UnknownPlayer(*p))?;
        let k = ratio_ids.binary_search(ratio).expect("collected above");
        y[i][k] = 1.0;
        clamped[i] = true;
    }
    let degree: Vec<f64> = g.adj.iter().map(|l| l.iter().map(|(_, w)| w).sum()).collect();
    let mut f = y.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut next = vec![vec![0.0; r]; n];
        let mut delta: f64 = 0.0;
        for i in 0..n {
            if clamped[i] {
                next[i].clone_from(&y[i]);
                continue;
            }
            if degree[i] > 0.0 {
                for &(j, w) in &g.adj[i] {
                    let s = cfg.alpha * w / degree[i];
                    for k in 0..r {
                        next[i][k] += s * f[j][k];
                    }
                }
            }
            for k in 0..r {
                next[i][k] += (1.0 - cfg.alpha) * y[i][k];
                delta = delta.max((next[i][k] - f[i][k]).abs());
            }
        }
        f = next;
        observer(iterations, &normalize_rows(&f));
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    let probs = normalize_rows(&f);
    let players = g
        .players
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (p, probabilities))| {
            let (best, max) = probabilities
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc });
            PlayerAssignment {
                player: *p,
                assigned: ratio_ids[best].clone(),
                uncertainty: 1.0 - max,
                labeled: clamped[i],
                probabilities,
            }
        })
        .collect();
    Ok(PropagationResult {
        ratio_ids,
        players,
        converged,
        iterations,
    })
}

/// The `k` most uncertain unlabelled players, ties by ascending id.
pub fn uncertain_players(res: &PropagationResult, k: usize) -> Result<Vec<&PlayerAssignment>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut rows: Vec<&PlayerAssignment> = res.players.iter().filter(|a| !a.labeled).collect();
    rows.sort_by(|a, b| b.uncertainty.total_cmp(&a.uncertainty).then(a.player.cmp(&b.player)));
    rows.truncate(k);
    Ok(rows)
}

/// A similarity graph with its evolving label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagator {
    pub graph: SimilarityGraph,
    pub labels: BTreeMap<PlayerId, String>,
    pub config: PropagationConfig,
}

impl Propagator {
    pub fn new(graph: SimilarityGraph, config: PropagationConfig) -> Self {
        Propagator {
            graph,
            labels: BTreeMap::new(),
            config,
        }
    }

    pub fn label(&mut self, player: PlayerId, ratio_id: impl Into<String>) -> Result<()> {
        let ratio_id = ratio_id.into();
        if self.graph.index_of(player).is_none() {
            return Err(Error::UnknownPlayer(player));
        }
        if ratio_id.is_empty() {
            return Err(Error::InvalidRatio("empty ratio id".into()));
        }
        self.labels.insert(player, ratio_id);
        Ok(())
    }

    pub fn run(&self) -> Result<PropagationResult> {
        propagate(&self.graph, &self.labels, &self.config)
    }

    /// Labels `player` with `ratio_id` and propagates again.
    pub fn remediate(&mut self, player: PlayerId, ratio_id: impl Into<String>) -> Result<PropagationResult> {
        self.label(player, ratio_id)?;
        self.run()
    }
}
