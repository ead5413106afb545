//! Preference channels.
//!
//! Every player gets one dense vector per channel, built from training-window
//! data only:
//!
//! * **social**: a 64-dimensional random-walk embedding of the cumulative
//!   interaction graph of the last week, followed by per-day
//!   `(pagerank, core number, closeness)` triples over the same week. Players
//!   absent from a day's graph get zeros for that day. Core numbers are divided
//!   by the day's maximum core so every short-term entry lies in `[0, 1]`.
//! * **gameplay**: per-mode engagement means over the trailing 1, 3, 5 and 7
//!   days.
//! * **avatar**: `ln(1 + inventory size)`, a hashed one-hot of the displayed
//!   avatar, a histogram over acquisition sources and the displayed avatar's
//!   visual embedding.
//! * **baseline**: z-scored behavioural aggregates: log interaction volume,
//!   per-mode engagement totals, friend count and inventory size.

mod embedding;
pub mod graph;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{temporal_split, AvatarId, Dataset, PlayerId, PlayerRecord, TrainView};
use crate::error::{Error, Result};

pub use embedding::{node_embedding, EmbeddingConfig};
pub use graph::{closeness, kcore, pagerank, InteractionGraph};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Social,
    Gameplay,
    Avatar,
    Baseline,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Social,
        Channel::Gameplay,
        Channel::Avatar,
        Channel::Baseline,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Social => "social",
            Channel::Gameplay => "gameplay",
            Channel::Avatar => "avatar",
            Channel::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown channel {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub channel: Channel,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Days of per-day graph metrics in the short-term social vector.
    pub short_window: u32,
    /// Days accumulated into the graph behind the long-term embedding.
    pub long_window: u32,
    /// Buckets of the displayed-avatar feature hash.
    pub hash_buckets: usize,
    pub embedding: EmbeddingConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            short_window: 7,
            long_window: 7,
            hash_buckets: 16,
            embedding: EmbeddingConfig::default(),
        }
    }
}

pub const GAMEPLAY_WINDOWS: [u32; 4] = [1, 3, 5, 7];

#[derive(Debug, Clone, PartialEq)]
pub struct SocialComponents {
    pub v_longterm: Vec<f64>,
    /// `(pagerank, normalised core, closeness)` per short-term day, oldest first.
    pub v_shortterm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameplayComponents {
    pub v_1d: Vec<f64>,
    pub v_3d: Vec<f64>,
    pub v_5d: Vec<f64>,
    pub v_7d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvatarComponents {
    pub v_num: Vec<f64>,
    pub v_displayed: Vec<f64>,
    pub v_acquisition: Vec<f64>,
    pub v_visual: Vec<f64>,
}

/// Row-major matrix of one channel's vectors, with cached row norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl ChannelMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: r.len(),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite feature value".into()));
            }
            data.extend_from_slice(r);
        }
        let norms = rows.iter().map(|r| l2_norm(r)).collect();
        Ok(ChannelMatrix { dim, data, norms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// Cosine between two rows; 0 when either row is all zeros.
    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
        cosine_from_parts(dot, self.norms[i], self.norms[j])
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        0.0
    } else {
        (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
    }
}

/// Per-player preference vectors for all four channels.
#[derive(Debug, Clone)]
pub struct Features {
    players: Vec<PlayerId>,
    index: HashMap<PlayerId, usize>,
    matrices: Vec<ChannelMatrix>,
    social_graph: InteractionGraph,
    /// Pagerank in `social_graph`, per player; 0 for players outside it.
    pagerank: Vec<f64>,
}

impl Features {
    /// Assembles features from explicit vectors, one row per player per
    /// channel, in `players` order.
    pub fn from_vectors(
        players: Vec<PlayerId>,
        channels: [Vec<Vec<f64>>; 4],
        social_graph: InteractionGraph,
    ) -> Result<Self> {
        let matrices = channels
            .iter()
            .map(|rows| {
                if rows.len() != players.len() {
                    return Err(Error::DimensionMismatch {
                        left: players.len(),
                        right: rows.len(),
                    });
                }
                ChannelMatrix::from_rows(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let index: HashMap<PlayerId, usize> =
            players.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        if index.len() != players.len() {
            return Err(Error::InvalidArgument("duplicate player in features".into()));
        }
        let scores = graph::pagerank_scores(&social_graph, graph::DEFAULT_DAMPING, graph::DEFAULT_PAGERANK_TOL);
        let pagerank = players
            .iter()
            .map(|p| social_graph.index_of(*p).map_or(0.0, |i| scores[i]))
            .collect();
        Ok(Features {
            players,
            index,
            matrices,
            social_graph,
            pagerank,
        })
    }

    /// Convenience for fixtures: the same vectors in every channel.
    pub fn uniform(vectors: &[(PlayerId, Vec<f64>)]) -> Result<Self> {
        let players = vectors.iter().map(|(p, _)| *p).collect();
        let rows: Vec<Vec<f64>> = vectors.iter().map(|(_, v)| v.clone()).collect();
        Self::from_vectors(
            players,
            [rows.clone(), rows.clone(), rows.clone(), rows],
            InteractionGraph::default(),
        )
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

    pub fn index_of(&self, id: PlayerId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn require(&self, id: PlayerId) -> Result<usize> {
        self.index_of(id).ok_or(Error::UnknownPlayer(id))
    }

    pub fn matrix(&self, channel: Channel) -> &ChannelMatrix {
        &self.matrices[channel.index()]
    }

    pub fn dim(&self, channel: Channel) -> usize {
        self.matrix(channel).dim()
    }

    pub fn vector(&self, id: PlayerId, channel: Channel) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.matrix(channel).row(i))
    }

    pub fn preference(&self, id: PlayerId, channel: Channel) -> Option<PreferenceVector> {
        self.vector(id, channel).map(|v| PreferenceVector {
            channel,
            values: v.to_vec(),
        })
    }

    /// Cosine between two players in a channel.
    pub fn cosine(&self, a: PlayerId, b: PlayerId, channel: Channel) -> Result<f64> {
        Ok(self.matrix(channel).cosine(self.require(a)?, self.require(b)?))
    }

    /// Cumulative interaction graph of the long-term social window.
    pub fn social_graph(&self) -> &InteractionGraph {
        &self.social_graph
    }

    pub fn pagerank(&self, id: PlayerId) -> Option<f64> {
        self.index_of(id).map(|i| self.pagerank[i])
    }

    /// Columnar text dump: one row per player, one column per vector entry.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "player")?;
        for c in Channel::ALL {
            for k in 0..self.dim(c) {
                write!(w, "\t{c}_{k}")?;
            }
        }
        writeln!(w)?;
        for (i, p) in self.players.iter().enumerate() {
            write!(w, "{p}")?;
            for c in Channel::ALL {
                for v in self.matrix(c).row(i) {
                    write!(w, "\t{v}")?;
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds all four channels for every player from the training window.
pub fn build_preferences(ds: &Dataset, cfg: &FeatureConfig) -> Result<Features> {
    let (train, _) = temporal_split(ds);
    let long_graph = InteractionGraph::window(&train, train.trailing_days(cfg.long_window));
    let social = social_components(&train, &long_graph, cfg);
    let gameplay: Vec<Vec<f64>> = ds
        .players
        .iter()
        .map(|p| gameplay_components(&train, p).concat())
        .collect();
    let avatar = ds
        .players
        .iter()
        .map(|p| avatar_components(ds, p, cfg.hash_buckets).map(AvatarComponents::concat))
        .collect::<Result<Vec<_>>>()?;
    let baseline = baseline_vectors(ds);
    let social = social.into_iter().map(SocialComponents::concat).collect();
    Features::from_vectors(
        ds.player_ids().collect(),
        [social, gameplay, avatar, baseline],
        long_graph,
    )
}

/// Social components for every player of the dataset, in player order.
pub fn social_components(
    train: &TrainView<'_>,
    long_graph: &InteractionGraph,
    cfg: &FeatureConfig,
) -> Vec<SocialComponents> {
    let ds = train.dataset();
    let emb_cfg = &cfg.embedding;
    let embedded = embedding::embed(long_graph, emb_cfg);
    let split = ds.split_day as i64;
    let window = cfg.short_window as i64;
    // one (pagerank, core, closeness) table per short-term day
    let daily: Vec<HashMap<PlayerId, [f64; 3]>> = (0..window)
        .into_par_iter()
        .map(|slot| {
            let day = split - window + slot;
            if day < 0 {
                return HashMap::new();
            }
            let g = InteractionGraph::for_day(train, day as u32);
            let pr = graph::pagerank_scores(&g, graph::DEFAULT_DAMPING, graph::DEFAULT_PAGERANK_TOL);
            let core = graph::core_numbers(&g);
            let max_core = core.iter().copied().max().unwrap_or(0).max(1) as f64;
            let close = graph::closeness_scores(&g);
            g.nodes()
                .iter()
                .enumerate()
                .map(|(i, id)| (*id, [pr[i], core[i] as f64 / max_core, close[i]]))
                .collect()
        })
        .collect();
    ds.players
        .iter()
        .map(|p| {
            let v_longterm = match long_graph.index_of(p.id) {
                Some(i) => embedded[i * emb_cfg.dims..(i + 1) * emb_cfg.dims].to_vec(),
                None => vec![0.0; emb_cfg.dims],
            };
            let v_shortterm = daily
                .iter()
                .flat_map(|day| day.get(&p.id).copied().unwrap_or([0.0; 3]))
                .collect();
            SocialComponents {
                v_longterm,
                v_shortterm,
            }
        })
        .collect()
}

impl SocialComponents {
    pub fn concat(self) -> Vec<f64> {
        let mut v = self.v_longterm;
        v.extend(self.v_shortterm);
        v
    }
}

/// Per-mode engagement means over windows ending the day before the split.
pub fn gameplay_components(train: &TrainView<'_>, p: &PlayerRecord) -> GameplayComponents {
    let n_modes = train.dataset().modes.len();
    let mean_over = |len: u32| -> Vec<f64> {
        let days = train.trailing_days(len);
        let count = days.len().max(1) as f64;
        (0..n_modes)
            .map(|m| days.clone().filter(|&d| p.engaged(d, m)).count() as f64 / count)
            .collect()
    };
    GameplayComponents {
        v_1d: mean_over(GAMEPLAY_WINDOWS[0]),
        v_3d: mean_over(GAMEPLAY_WINDOWS[1]),
        v_5d: mean_over(GAMEPLAY_WINDOWS[2]),
        v_7d: mean_over(GAMEPLAY_WINDOWS[3]),
    }
}

impl GameplayComponents {
    pub fn concat(&self) -> Vec<f64> {
        [&self.v_1d, &self.v_3d, &self.v_5d, &self.v_7d]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

pub fn avatar_components(
    ds: &Dataset,
    p: &PlayerRecord,
    hash_buckets: usize,
) -> Result<AvatarComponents> {
    let mut v_displayed = vec![0.0; hash_buckets];
    let mut v_visual = vec![0.0; ds.visual_dim()];
    if let Some(a) = p.displayed_avatar {
        if hash_buckets > 0 {
            v_displayed[avatar_bucket(a, hash_buckets)] = 1.0;
        }
        let emb = ds
            .avatar_visual_embeddings
            .get(&a)
            .ok_or(Error::MissingEmbedding(a))?;
        v_visual.copy_from_slice(emb);
    }
    let mut v_acquisition = vec![0.0; ds.acquisition_sources as usize];
    for source in p.avatar_acquisitions.values() {
        v_acquisition[*source as usize] += 1.0;
    }
    Ok(AvatarComponents {
        v_num: vec![(1.0 + p.inventory_size() as f64).ln()],
        v_displayed,
        v_acquisition,
        v_visual,
    })
}

impl AvatarComponents {
    pub fn concat(self) -> Vec<f64> {
        [self.v_num, self.v_displayed, self.v_acquisition, self.v_visual].concat()
    }
}

fn avatar_bucket(a: AvatarId, buckets: usize) -> usize {
    (crate::stream_seed(0x5eed_a7a7, a.0 as u64) % buckets as u64) as usize
}

/// Raw behavioural aggregates per player (before z-scoring): log interaction
/// volume, engagement days per mode, friend count, inventory size.
pub fn baseline_attributes(ds: &Dataset) -> Vec<Vec<f64>> {
    let (train, _) = temporal_split(ds);
    let mut volume: BTreeMap<PlayerId, f64> = BTreeMap::new();
    for p in &ds.players {
        for i in train.interactions(p) {
            *volume.entry(p.id).or_default() += i.count as f64;
            *volume.entry(i.partner).or_default() += i.count as f64;
        }
    }
    ds.players
        .iter()
        .map(|p| {
            let mut row = vec![(1.0 + volume.get(&p.id).copied().unwrap_or(0.0)).ln()];
            row.extend((0..ds.modes.len()).map(|m| train.days().filter(|&d| p.engaged(d, m)).count() as f64));
            row.push(train.friends(p).len() as f64);
            row.push(p.inventory_size() as f64);
            row
        })
        .collect()
}

/// Baseline channel: [`baseline_attributes`] z-scored per column over the
/// population. Constant columns become zeros.
pub fn baseline_vectors(ds: &Dataset) -> Vec<Vec<f64>> {
    let mut rows = baseline_attributes(ds);
    let n = rows.len();
    if n == 0 {
        return rows;
    }
    let dim = rows[0].len();
    for k in 0..dim {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for r in &mut rows {
            r[k] = if sd > 1e-12 { (r[k] - mean) / sd } else { 0.0 };
        }
    }
    rows
}
