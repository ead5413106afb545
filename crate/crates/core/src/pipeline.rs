//! Candidate generation, band classification, intra-channel sampling and
//! inter-channel fusion.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PlayerId;
use crate::error::{Error, Result};
use crate::features::{cosine_from_parts, l2_norm, Channel, Features};

pub const DEFAULT_K: usize = 400;
pub const DEFAULT_M: usize = 100;
pub const BANDS: usize = 4;

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(cosine_from_parts(dot, l2_norm(a), l2_norm(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCandidates {
    pub channel: Channel,
    pub generated_for: PlayerId,
    /// Sorted by descending similarity, ties by ascending id.
    pub entries: Vec<(PlayerId, f64)>,
}

impl ChannelCandidates {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.entries.iter().map(|(p, _)| *p)
    }
}

fn by_similarity(a: &(PlayerId, f64), b: &(PlayerId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-`k` players by cosine in `channel`, skipping `player` and `exclude`.
pub fn generate_candidates(
    features: &Features,
    player: PlayerId,
    exclude: &BTreeSet<PlayerId>,
    channel: Channel,
    k: usize,
) -> Result<ChannelCandidates> {
    let me = features.require(player)?;
    let matrix = features.matrix(channel);
    let mut entries: Vec<(PlayerId, f64)> = features
        .players()
        .iter()
        .enumerate()
        .filter(|(i, p)| *i != me && !exclude.contains(p))
        .map(|(i, p)| (*p, matrix.cosine(me, i)))
        .collect();
    if k < entries.len() {
        entries.select_nth_unstable_by(k, by_similarity);
        entries.truncate(k);
    }
    entries.sort_by(by_similarity);
    Ok(ChannelCandidates {
        channel,
        generated_for: player,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedCandidates {
    pub channel: Channel,
    pub generated_for: PlayerId,
    /// Band 0 is innermost (highest similarity).
    pub bands: [Vec<(PlayerId, f64)>; BANDS],
}

impl BandedCandidates {
    pub fn sizes(&self) -> [usize; BANDS] {
        std::array::from_fn(|i| self.bands[i].len())
    }

    pub fn band_of(&self, p: PlayerId) -> Option<usize> {
        self.bands
            .iter()
            .position(|b| b.iter().any(|(q, _)| *q == p))
    }
}

/// Band sizes for `n` ranked candidates; the remainder goes to inner bands.
pub fn band_sizes(n: usize) -> [usize; BANDS] {
    std::array::from_fn(|i| n / BANDS + usize::from(i < n % BANDS))
}

pub fn band_classify(cc: &ChannelCandidates) -> Result<BandedCandidates> {
    if cc.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut rest = cc.entries.as_slice();
    let bands = band_sizes(cc.len()).map(|size| {
        let (head, tail) = rest.split_at(size);
        rest = tail;
        head.to_vec()
    });
    Ok(BandedCandidates {
        channel: cc.channel,
        generated_for: cc.generated_for,
        bands,
    })
}

/// Draws `round(freq_i * |band_i|)` candidates uniformly from each band.
pub fn sample(bc: &BandedCandidates, freqs: &[f64; BANDS], seed: u64) -> Result<ChannelCandidates> {
    check_freqs(freqs)?;
    let mut rng = crate::seeded_rng(seed);
    let mut entries = Vec::new();
    for (band, f) in bc.bands.iter().zip(freqs) {
        let take = (f * band.len() as f64).round() as usize;
        if take == band.len() {
            entries.extend_from_slice(band);
        } else {
            entries.extend(index::sample(&mut rng, band.len(), take).into_iter().map(|i| band[i]));
        }
    }
    entries.sort_by(by_similarity);
    Ok(ChannelCandidates {
        channel: bc.channel,
        generated_for: bc.generated_for,
        entries,
    })
}

fn check_freqs(freqs: &[f64; BANDS]) -> Result<()> {
    if freqs.iter().all(|f| (0.0..=1.0).contains(f)) {
        Ok(())
    } else {
        Err(Error::InvalidRatio(format!("band frequencies {freqs:?} outside [0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntraRatio(pub BTreeMap<Channel, [f64; BANDS]>);

impl IntraRatio {
    pub fn uniform(channels: impl IntoIterator<Item = Channel>, freqs: [f64; BANDS]) -> Self {
        IntraRatio(channels.into_iter().map(|c| (c, freqs)).collect())
    }

    pub fn get(&self, c: Channel) -> Option<&[f64; BANDS]> {
        self.0.get(&c)
    }

    pub fn validate(&self) -> Result<()> {
        self.0.values().try_for_each(check_freqs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Channel, f64>", into = "BTreeMap<Channel, f64>")]
pub struct InterRatio(BTreeMap<Channel, f64>);

impl InterRatio {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: BTreeMap<Channel, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidRatio("no channel weights".into()));
        }
        if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidRatio("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidRatio(format!("weights sum to {sum}, not 1")));
        }
        Ok(InterRatio(weights))
    }

    /// Scales non-negative raw weights to sum to one.
    pub fn normalized(raw: BTreeMap<Channel, f64>) -> Result<Self> {
        let sum: f64 = raw.values().sum();
        if !(sum > 0.0 && sum.is_finite()) || raw.values().any(|w| *w < 0.0) {
            return Err(Error::InvalidRatio("raw weights must be non-negative with positive sum".into()));
        }
        Self::new(raw.into_iter().map(|(c, w)| (c, w / sum)).collect())
    }

    pub fn single(c: Channel) -> Self {
        InterRatio(BTreeMap::from([(c, 1.0)]))
    }

    pub fn weight(&self, c: Channel) -> f64 {
        self.0.get(&c).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &BTreeMap<Channel, f64> {
        &self.0
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.0.keys().copied()
    }
}

impl TryFrom<BTreeMap<Channel, f64>> for InterRatio {
    type Error = Error;

    fn try_from(m: BTreeMap<Channel, f64>) -> Result<Self> {
        InterRatio::new(m)
    }
}

impl From<InterRatio> for BTreeMap<Channel, f64> {
    fn from(r: InterRatio) -> Self {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRatio {
    pub ratio_id: String,
    pub intra: IntraRatio,
    pub inter: InterRatio,
}

impl PreferenceRatio {
    pub const BASELINE_ID: &'static str = "baseline";

    pub fn new(ratio_id: impl Into<String>, intra: IntraRatio, inter: InterRatio) -> Result<Self> {
        let r = PreferenceRatio {
            ratio_id: ratio_id.into(),
            intra,
            inter,
        };
        r.validate()?;
        Ok(r)
    }

    /// Reserved ratio that recommends from the baseline channel alone.
    pub fn baseline() -> Self {
        PreferenceRatio {
            ratio_id: Self::BASELINE_ID.into(),
            intra: IntraRatio::uniform([Channel::Baseline], [1.0; BANDS]),
            inter: InterRatio::single(Channel::Baseline),
        }
    }

    /// Starting point for tuning: every band fully sampled, equal weights.
    pub fn initial(ratio_id: impl Into<String>, channels: &[Channel]) -> Result<Self> {
        let raw = channels.iter().map(|c| (*c, 1.0)).collect();
        Self::new(
            ratio_id,
            IntraRatio::uniform(channels.iter().copied(), [1.0; BANDS]),
            InterRatio::normalized(raw)?,
        )
    }

    pub fn active_channels(&self) -> Vec<Channel> {
        self.inter.channels().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio_id.is_empty() {
            return Err(Error::InvalidRatio("empty ratio id".into()));
        }
        self.intra.validate()?;
        let intra: BTreeSet<Channel> = self.intra.0.keys().copied().collect();
        let inter: BTreeSet<Channel> = self.inter.channels().collect();
        if intra != inter {
            return Err(Error::InvalidRatio(format!(
                "intra channels {intra:?} differ from inter channels {inter:?}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: PreferenceRatio = serde_json::from_str(s)?;
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub player: PlayerId,
    /// Similarity in each channel whose sample holds this player.
    pub similarity: BTreeMap<Channel, f64>,
    pub membership: BTreeSet<Channel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedSet {
    pub target_size: usize,
    pub slots: BTreeMap<Channel, usize>,
    pub entries: Vec<FusedEntry>,
}

impl FusedSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.entries.iter().map(|e| e.player)
    }
}

/// Largest-remainder apportionment of `m` slots by weight. Ties on the
/// remainder go to the larger weight, then the earlier channel.
pub fn allocate_slots(inter: &InterRatio, m: usize) -> BTreeMap<Channel, usize> {
    let quotas: Vec<(Channel, f64)> = inter
        .weights()
        .iter()
        .map(|(c, w)| (*c, w * m as f64))
        .collect();
    let mut slots: BTreeMap<Channel, usize> =
        quotas.iter().map(|(c, q)| (*c, q.floor() as usize)).collect();
    let assigned: usize = slots.values().sum();
    let mut order: Vec<(Channel, f64)> = quotas.iter().map(|(c, q)| (*c, q - q.floor())).collect();
    order.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(inter.weight(b.0).total_cmp(&inter.weight(a.0)))
            .then(a.0.cmp(&b.0))
    });
    for (c, _) in order.iter().take(m.saturating_sub(assigned)) {
        *slots.get_mut(c).expect("allocated channel") += 1;
    }
    slots
}

/// Merges per-channel samples into at most `m` unique candidates.
///
/// Channels fill their quotas in weight order. Taking a candidate already
/// chosen by another channel spends the slot without adding an entry. Quota a
/// channel cannot fill carries to the next channel in weight order, and any
/// shortfall left at the end is topped up from the best remaining candidates
/// of positive-weight channels.
pub fn fuse(samples: &[ChannelCandidates], inter: &InterRatio, m: usize) -> Result<FusedSet> {
    if m == 0 {
        return Err(Error::InvalidArgument("fused set size must be positive".into()));
    }
    let provided: BTreeSet<Channel> = samples.iter().map(|s| s.channel).collect();
    let weighted: BTreeSet<Channel> = inter.channels().collect();
    if provided.len() != samples.len() || provided != weighted {
        return Err(Error::InvalidRatio(format!(
            "weights cover {weighted:?} but samples cover {provided:?}"
        )));
    }
    let slots = allocate_slots(inter, m);
    let mut order: Vec<&ChannelCandidates> = samples.iter().filter(|s| inter.weight(s.channel) > 0.0).collect();
    order.sort_by(|a, b| {
        inter
            .weight(b.channel)
            .total_cmp(&inter.weight(a.channel))
            .then(a.channel.cmp(&b.channel))
    });

    let mut chosen: Vec<PlayerId> = Vec::new();
    let mut taken: BTreeSet<PlayerId> = BTreeSet::new();
    let mut carry = 0;
    for s in &order {
        let mut quota = slots[&s.channel] + carry;
        let mut entries = s.entries.iter();
        while quota > 0 {
            let Some((p, _)) = entries.next() else { break };
            if taken.insert(*p) {
                chosen.push(*p);
            }
            quota -= 1;
        }
        carry = quota;
    }
    if chosen.len() < m {
        let mut rest: Vec<(PlayerId, f64)> = order
            .iter()
            .flat_map(|s| s.entries.iter().copied())
            .filter(|(p, _)| !taken.contains(p))
            .collect();
        rest.sort_by(by_similarity);
        for (p, _) in rest {
            if chosen.len() == m {
                break;
            }
            if taken.insert(p) {
                chosen.push(p);
            }
        }
    }

    let lookup: Vec<(Channel, HashMap<PlayerId, f64>)> = order
        .iter()
        .map(|s| (s.channel, s.entries.iter().copied().collect()))
        .collect();
    let entries = chosen
        .into_iter()
        .map(|p| {
            let similarity: BTreeMap<Channel, f64> = lookup
                .iter()
                .filter_map(|(c, sims)| sims.get(&p).map(|s| (*c, *s)))
                .collect();
            FusedEntry {
                player: p,
                membership: similarity.keys().copied().collect(),
                similarity,
            }
        })
        .collect();
    Ok(FusedSet {
        target_size: m,
        slots,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: DEFAULT_K,
            m: DEFAULT_M,
            seed: 0,
        }
    }
}

/// Sampling seed for one player and channel.
pub fn sample_seed(seed: u64, player: PlayerId, channel: Channel) -> u64 {
    crate::stream_seed(crate::stream_seed(seed, player.0 as u64), channel.index() as u64)
}

/// Every stage for one player under `ratio`: per-channel candidates, their
/// samples, and the fused set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub candidates: Vec<ChannelCandidates>,
    pub samples: Vec<ChannelCandidates>,
    pub fused: FusedSet,
}

pub fn run_pipeline(
    features: &Features,
    player: PlayerId,
    exclude: &BTreeSet<PlayerId>,
    ratio: &PreferenceRatio,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    ratio.validate()?;
    let channels = ratio.active_channels();
    let stages = channels
        .par_iter()
        .map(|&c| {
            let cc = generate_candidates(features, player, exclude, c, cfg.k)?;
            let sampled = if cc.is_empty() {
                cc.clone()
            } else {
                let freqs = ratio.intra.get(c).expect("validated ratio");
                sample(&band_classify(&cc)?, freqs, sample_seed(cfg.seed, player, c))?
            };
            Ok((cc, sampled))
        })
        .collect::<Result<Vec<_>>>()?;
    let (candidates, samples): (Vec<_>, Vec<_>) = stages.into_iter().unzip();
    let fused = fuse(&samples, &ratio.inter, cfg.m)?;
    Ok(PipelineRun {
        candidates,
        samples,
        fused,
    })
}
