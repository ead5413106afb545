//! Similarity/diversity and quality metrics, plus per-iteration history.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PlayerId;
use crate::error::{Error, Result};
use crate::features::{Channel, Features};

/// Channel used for similarity metrics unless a caller picks another.
pub const METRIC_CHANNEL: Channel = Channel::Baseline;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SDMetrics {
    pub content_diversity: f64,
    pub total_sim: f64,
    pub fri_sim: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub hit_rate: f64,
}

fn unique(recs: &[PlayerId]) -> Vec<PlayerId> {
    let mut seen = BTreeSet::new();
    recs.iter().copied().filter(|p| seen.insert(*p)).collect()
}

/// `1 -` mean pairwise cosine among the distinct recommended players,
/// clamped to `[0, 1]`. Fewer than two distinct players give 0.
pub fn content_diversity(recs: &[PlayerId], features: &Features, channel: Channel) -> Result<f64> {
    let idx = unique(recs)
        .into_iter()
        .map(|p| features.require(p))
        .collect::<Result<Vec<_>>>()?;
    if idx.len() < 2 {
        return Ok(0.0);
    }
    let m = features.matrix(channel);
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (k, &i) in idx.iter().enumerate() {
        for &j in &idx[k + 1..] {
            sum += m.cosine(i, j);
            pairs += 1;
        }
    }
    Ok((1.0 - sum / pairs as f64).clamp(0.0, 1.0))
}

/// Mean cosine between the player and each recommended player.
pub fn total_sim(player: PlayerId, recs: &[PlayerId], features: &Features, channel: Channel) -> Result<f64> {
    if recs.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let me = features.require(player)?;
    let m = features.matrix(channel);
    let mut sum = 0.0;
    for r in recs {
        sum += m.cosine(me, features.require(*r)?);
    }
    Ok(sum / recs.len() as f64)
}

/// Mean cosine over all (recommended player, existing friend) pairs; 0 for a
/// player without friends.
pub fn fri_sim(
    recs: &[PlayerId],
    friends: &BTreeSet<PlayerId>,
    features: &Features,
    channel: Channel,
) -> Result<f64> {
    if recs.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let r_idx = recs.iter().map(|p| features.require(*p)).collect::<Result<Vec<_>>>()?;
    // friends outside the feature population cannot be compared
    let f_idx: Vec<usize> = friends.iter().filter_map(|f| features.index_of(*f)).collect();
    if f_idx.is_empty() {
        return Ok(0.0);
    }
    let m = features.matrix(channel);
    let sum: f64 = r_idx
        .iter()
        .flat_map(|&r| f_idx.iter().map(move |&f| m.cosine(r, f)))
        .sum();
    Ok(sum / (r_idx.len() * f_idx.len()) as f64)
}

pub fn sd_metrics(
    player: PlayerId,
    recs: &[PlayerId],
    friends: &BTreeSet<PlayerId>,
    features: &Features,
    channel: Channel,
) -> Result<SDMetrics> {
    Ok(SDMetrics {
        content_diversity: content_diversity(recs, features, channel)?,
        total_sim: total_sim(player, recs, features, channel)?,
        fri_sim: fri_sim(recs, friends, features, channel)?,
    })
}

/// Precision divides by `n`, the list length the recommender was asked for.
pub fn quality(recs: &[PlayerId], ground_truth: &BTreeSet<PlayerId>, n: usize) -> QualityMetrics {
    let hits = unique(recs).iter().filter(|p| ground_truth.contains(p)).count() as f64;
    let recall = if ground_truth.is_empty() {
        0.0
    } else {
        hits / ground_truth.len() as f64
    };
    let precision = if n == 0 { 0.0 } else { hits / n as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    QualityMetrics {
        recall,
        precision,
        f1,
        hit_rate: if hits >= 1.0 { 1.0 } else { 0.0 },
    }
}

pub fn mean_sd(items: &[SDMetrics]) -> SDMetrics {
    let n = items.len().max(1) as f64;
    SDMetrics {
        content_diversity: items.iter().map(|m| m.content_diversity).sum::<f64>() / n,
        total_sim: items.iter().map(|m| m.total_sim).sum::<f64>() / n,
        fri_sim: items.iter().map(|m| m.fri_sim).sum::<f64>() / n,
    }
}

pub fn mean_quality(items: &[QualityMetrics]) -> QualityMetrics {
    let n = items.len().max(1) as f64;
    QualityMetrics {
        recall: items.iter().map(|m| m.recall).sum::<f64>() / n,
        precision: items.iter().map(|m| m.precision).sum::<f64>() / n,
        f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
        hit_rate: items.iter().map(|m| m.hit_rate).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub group_id: String,
    pub sd: SDMetrics,
    pub quality: QualityMetrics,
    /// ratio_id assigned to each group player.
    pub assignment: BTreeMap<PlayerId, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    records: Vec<IterationRecord>,
}

impl History {
    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record numbered one past the last.
    pub fn record(
        &mut self,
        group_id: impl Into<String>,
        sd: SDMetrics,
        quality: QualityMetrics,
        assignment: BTreeMap<PlayerId, String>,
    ) -> &IterationRecord {
        let iteration = self.records.last().map_or(1, |r| r.iteration + 1);
        self.records.push(IterationRecord {
            iteration,
            group_id: group_id.into(),
            sd,
            quality,
            assignment,
        });
        self.records.last().expect("just pushed")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let h: History = serde_json::from_slice(&std::fs::read(path)?)?;
        if h.records.windows(2).any(|w| w[1].iteration <= w[0].iteration) {
            return Err(Error::InvalidArgument("history iterations not increasing".into()));
        }
        Ok(h)
    }

    /// One tab-separated row per iteration.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "iteration\tgroup\tcontent_diversity\ttotal_sim\tfri_sim\trecall\tprecision\tf1\thit_rate"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.iteration,
                r.group_id,
                r.sd.content_diversity,
                r.sd.total_sim,
                r.sd.fri_sim,
                r.quality.recall,
                r.quality.precision,
                r.quality.f1,
                r.quality.hit_rate
            )?;
        }
        Ok(())
    }
}
