//! Friend-acceptance ranking: pair featurisation, training-set construction
//! from the temporal split, boosted-tree training, evaluation and top-N
//! ranking of fused candidates.

mod gbdt;

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PlayerId};
use crate::error::{Error, Result};
use crate::features::{Channel, Features};
use crate::pipeline::FusedSet;

pub use gbdt::{
    log_loss, midpoint, split_gain, train_gbdt, train_gbdt_traced, GbdtModel, GbdtParams, Node,
    TrainReport, MODEL_FORMAT_VERSION,
};

pub const DEFAULT_N: usize = 10;

pub const PAIR_FEATURE_NAMES: [&str; 7] = [
    "cos_social",
    "cos_gameplay",
    "cos_avatar",
    "cos_baseline",
    "friend_count_diff",
    "common_neighbors",
    "candidate_pagerank",
];

/// Features of an (anchor, candidate) pair, in [`PAIR_FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures(pub [f64; 7]);

impl PairFeatures {
    pub fn channel_cosine(&self, c: Channel) -> f64 {
        self.0[c.index()]
    }
}

/// Computes [`PairFeatures`] from training-window data.
#[derive(Clone, Copy)]
pub struct PairFeaturizer<'a> {
    ds: &'a Dataset,
    features: &'a Features,
}

impl<'a> PairFeaturizer<'a> {
    pub fn new(ds: &'a Dataset, features: &'a Features) -> Self {
        PairFeaturizer { ds, features }
    }

    pub fn pair(&self, anchor: PlayerId, candidate: PlayerId) -> Result<PairFeatures> {
        let a = self.features.require(anchor)?;
        let b = self.features.require(candidate)?;
        let friends = |p: PlayerId| {
            self.ds
                .player(p)
                .map(|r| r.friends_before.len() as f64)
                .ok_or(Error::UnknownPlayer(p))
        };
        let cos = Channel::ALL.map(|c| self.features.matrix(c).cosine(a, b));
        Ok(PairFeatures([
            cos[0],
            cos[1],
            cos[2],
            cos[3],
            (friends(anchor)? - friends(candidate)?).abs(),
            self.features.social_graph().common_neighbors(anchor, candidate) as f64,
            self.features.pagerank(candidate).unwrap_or(0.0),
        ]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    /// (anchor, candidate) per row.
    pub pairs: Vec<(PlayerId, PlayerId)>,
    pub x: Vec<PairFeatures>,
    pub y: Vec<bool>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.x.iter().map(|f| f.0.to_vec()).collect()
    }
}

/// Labelled pairs over the whole population; see [`build_training_set_within`].
pub fn build_training_set(ds: &Dataset, features: &Features, seed: u64) -> Result<TrainingSet> {
    let all: BTreeSet<PlayerId> = ds.player_ids().collect();
    build_training_set_within(ds, features, &all, seed)
}

/// Labelled pairs with both ends in `players`. Each anchor contributes its
/// post-split friendships as positives and the same number of uniformly drawn
/// non-friends as negatives.
pub fn build_training_set_within(
    ds: &Dataset,
    features: &Features,
    players: &BTreeSet<PlayerId>,
    seed: u64,
) -> Result<TrainingSet> {
    let pool: Vec<PlayerId> = players.iter().copied().collect();
    let featurizer = PairFeaturizer::new(ds, features);
    let per_anchor = pool
        .par_iter()
        .map(|&anchor| -> Result<Vec<((PlayerId, PlayerId), PairFeatures, bool)>> {
            let record = ds.player(anchor).ok_or(Error::UnknownPlayer(anchor))?;
            let positives: Vec<PlayerId> = record
                .friends_after
                .iter()
                .copied()
                .filter(|f| players.contains(f))
                .collect();
            let excluded = |c: &PlayerId| {
                *c == anchor || record.friends_before.contains(c) || record.friends_after.contains(c)
            };
            let eligible = pool.iter().filter(|c| !excluded(c)).count();
            let want = positives.len().min(eligible);
            let mut rng = crate::seeded_rng(crate::stream_seed(seed, anchor.0 as u64));
            let mut negatives = BTreeSet::new();
            let mut drawn = Vec::with_capacity(want);
            while drawn.len() < want {
                let c = pool[rng.random_range(0..pool.len())];
                if !excluded(&c) && negatives.insert(c) {
                    drawn.push(c);
                }
            }
            let mut rows = Vec::with_capacity(positives.len() + drawn.len());
            for (c, label) in positives.iter().map(|c| (*c, true)).chain(drawn.into_iter().map(|c| (c, false))) {
                rows.push(((anchor, c), featurizer.pair(anchor, c)?, label));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = TrainingSet {
        pairs: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    for (pair, f, label) in per_anchor.into_iter().flatten() {
        set.pairs.push(pair);
        set.x.push(f);
        set.y.push(label);
    }
    if !set.y.iter().any(|v| *v) {
        return Err(Error::Training("no post-split friendships to learn from".into()));
    }
    Ok(set)
}

/// Seeded partition of players into (train, test), `test_fraction` of them in
/// test. Building pairs within each side keeps every pair on one side.
pub fn split_players(
    players: impl IntoIterator<Item = PlayerId>,
    test_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<PlayerId>, BTreeSet<PlayerId>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut ids: Vec<PlayerId> = players.into_iter().collect();
    ids.sort();
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    let mut rng = crate::seeded_rng(seed);
    let test: BTreeSet<PlayerId> = rand::seq::index::sample(&mut rng, ids.len(), n_test)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    let train = ids.into_iter().filter(|p| !test.contains(p)).collect();
    Ok((train, test))
}

pub fn train(set: &TrainingSet, params: &GbdtParams, seed: u64) -> Result<GbdtModel> {
    train_gbdt(&set.rows(), &set.y, params, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Area under the ROC curve by the rank statistic, ties counted half.
pub fn auc(scores: &[f64], y: &[bool]) -> Result<f64> {
    let pos = y.iter().filter(|v| **v).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| y[k]).count() as f64;
        i = j + 1;
    }
    let pos = pos as f64;
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

pub fn evaluate_scores(probs: &[f64], y: &[bool]) -> Result<EvalMetrics> {
    let auc = auc(probs, y)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (p, &label) in probs.iter().zip(y) {
        match (*p >= 0.5, label) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    Ok(EvalMetrics {
        accuracy: (tp + tn) / probs.len() as f64,
        recall,
        precision,
        f1: ratio(2.0 * precision * recall, precision + recall),
        auc,
    })
}

pub fn evaluate(model: &GbdtModel, test: &TrainingSet) -> Result<EvalMetrics> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let probs: Vec<f64> = test.x.iter().map(|f| model.predict_proba(&f.0)).collect();
    evaluate_scores(&probs, &test.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub n: usize,
    /// Descending probability, ties by ascending id.
    pub entries: Vec<(PlayerId, f64)>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.entries.iter().map(|(p, _)| *p)
    }
}

/// Top-`n` fused candidates by predicted acceptance; `n` is clamped to the
/// fused set size.
pub fn rank(
    model: &GbdtModel,
    featurizer: &PairFeaturizer<'_>,
    player: PlayerId,
    fused: &FusedSet,
    n: usize,
) -> Result<RankedList> {
    if fused.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut entries = fused
        .ids()
        .map(|c| Ok((c, model.predict_proba(&featurizer.pair(player, c)?.0))))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = n.min(entries.len());
    entries.truncate(n);
    Ok(RankedList { n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::features::{build_preferences, FeatureConfig};
    use crate::pipeline::FusedEntry;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(auc(&[0.5, 0.5], &[true, true]).is_err());
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let m = evaluate_scores(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(m, EvalMetrics { accuracy: 1.0, recall: 1.0, precision: 1.0, f1: 1.0, auc: 1.0 });
    }

    #[test]
    fn one_to_one_negatives_and_determinism() {
        let ds = generate_synthetic(&SyntheticConfig::new(150, 3, 2)).unwrap();
        let f = build_preferences(&ds, &FeatureConfig::default()).unwrap();
        let a = build_training_set(&ds, &f, 4).unwrap();
        assert_eq!(a, build_training_set(&ds, &f, 4).unwrap());
        for p in &ds.players {
            let rows: Vec<bool> = a.pairs.iter().zip(&a.y).filter(|((x, _), _)| *x == p.id).map(|(_, y)| *y).collect();
            let pos = rows.iter().filter(|v| **v).count();
            assert_eq!(pos, p.friends_after.len());
            assert_eq!(rows.len(), 2 * pos);
        }
        for ((anchor, cand), label) in a.pairs.iter().zip(&a.y) {
            let r = ds.player(*anchor).unwrap();
            assert_eq!(*label, r.friends_after.contains(cand));
            assert!(!r.friends_before.contains(cand));
        }
    }

    #[test]
    fn player_split_is_a_partition() {
        let (train, test) = split_players((0..100).map(PlayerId), 0.3, 1).unwrap();
        assert_eq!(test.len(), 30);
        assert_eq!(train.len(), 70);
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn rank_ties_by_id_and_clamps() {
        let f = Features::uniform(&[
            (PlayerId(0), vec![1.0, 0.0]),
            (PlayerId(5), vec![0.0, 1.0]),
            (PlayerId(3), vec![0.0, 1.0]),
        ])
        .unwrap();
        let mut players: Vec<_> = [0, 3, 5].iter().map(|i| crate::data::PlayerRecord::new(PlayerId(*i), 10)).collect();
        players.sort_by_key(|p| p.id);
        let ds = Dataset::new(10, 5, crate::data::default_modes(), 1, players, Default::default()).unwrap();
        let model = GbdtModel {
            version: MODEL_FORMAT_VERSION,
            n_features: 7,
            params: GbdtParams::default(),
            base_score: 0.3,
            trees: vec![],
        };
        let entry = |p: u32| FusedEntry {
            player: PlayerId(p),
            similarity: Default::default(),
            membership: BTreeSet::from([Channel::Social]),
        };
        let fused = FusedSet { target_size: 10, slots: Default::default(), entries: vec![entry(5), entry(3)] };
        let r = rank(&model, &PairFeaturizer::new(&ds, &f), PlayerId(0), &fused, 10).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![PlayerId(3), PlayerId(5)]);
        let empty = FusedSet { target_size: 10, slots: Default::default(), entries: vec![] };
        assert!(rank(&model, &PairFeaturizer::new(&ds, &f), PlayerId(0), &empty, 10).is_err());
    }
}
