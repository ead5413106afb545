//! Synthetic player populations with planted group structure.
//!
//! Players are split into contiguous id blocks, one per group. Each group has
//! an archetype that shapes every channel: gameplay mode propensities, social
//! density, a private avatar pool with a favoured acquisition source, and a
//! visual-embedding centroid. Interactions are mostly intra-group, existing
//! friendships grow out of repeated interactions, and new friendships in the
//! test window are drawn with probability increasing in the pair's baseline
//! similarity plus noise.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AvatarId, Dataset, PlayerId, PlayerRecord};
use crate::error::{Error, Result};
use crate::features::baseline_vectors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupArchetype {
    /// Daily engagement probability per gameplay mode.
    pub engagement: Vec<f64>,
    /// Multiplier on the daily contact rate.
    pub social_density: f64,
    pub avatar_pool: Vec<u32>,
    pub favored_source: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_players: usize,
    pub n_groups: usize,
    pub span_days: u32,
    pub split_day: u32,
    pub modes: Vec<String>,
    /// One per group; empty selects the built-in palette.
    pub archetypes: Vec<GroupArchetype>,
    /// Success probability of a daily contact attempt with a same-group player.
    pub intra_group_prob: f64,
    /// Success probability of a daily contact attempt with another group.
    pub inter_group_prob: f64,
    pub contacts_per_day: f64,
    /// Interaction count at which an existing friendship becomes likely.
    pub friendship_scale: f64,
    /// Expected number of new friendships per player in the test window.
    pub new_friends_per_player: f64,
    /// Log-odds boost per unit of baseline cosine for new friendships.
    pub friend_signal: f64,
    pub friend_noise: f64,
    pub avatars_per_group: u32,
    pub shared_avatars: u32,
    pub acquisition_sources: u32,
    pub visual_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_players: 2000,
            n_groups: 4,
            span_days: super::DEFAULT_SPAN_DAYS,
            split_day: super::DEFAULT_SPLIT_DAY,
            modes: super::default_modes(),
            archetypes: Vec::new(),
            intra_group_prob: 0.8,
            inter_group_prob: 0.15,
            contacts_per_day: 2.0,
            friendship_scale: 12.0,
            new_friends_per_player: 4.0,
            friend_signal: 4.0,
            friend_noise: 0.5,
            avatars_per_group: 12,
            shared_avatars: 8,
            acquisition_sources: 4,
            visual_dim: 32,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn new(n_players: usize, n_groups: usize, seed: u64) -> Self {
        SyntheticConfig {
            n_players,
            n_groups,
            seed,
            ..Default::default()
        }
    }

    /// Planted group of a generated player.
    pub fn group_of(&self, id: PlayerId) -> usize {
        (id.0 as usize * self.n_groups) / self.n_players.max(1)
    }

    fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        // inverse of group_of: smallest i with i * n_groups / n_players >= g
        let start = |g: usize| (g * self.n_players).div_ceil(self.n_groups);
        start(g)..start(g + 1)
    }

    pub fn archetype(&self, g: usize) -> GroupArchetype {
        if let Some(a) = self.archetypes.get(g) {
            return a.clone();
        }
        let n_modes = self.modes.len();
        let patterns = (1usize << n_modes.min(16)) - 1;
        let mask = g % patterns.max(1) + 1;
        let engagement = (0..n_modes)
            .map(|m| if mask & (1 << m) != 0 { 0.85 } else { 0.15 })
            .collect();
        let start = g as u32 * self.avatars_per_group;
        GroupArchetype {
            engagement,
            social_density: [1.0, 1.5, 0.7, 1.2][g % 4],
            avatar_pool: (start..start + self.avatars_per_group).collect(),
            favored_source: g as u32 % self.acquisition_sources.max(1),
        }
    }

    fn shared_pool(&self) -> Vec<u32> {
        let start = self.n_groups as u32 * self.avatars_per_group;
        (start..start + self.shared_avatars).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_groups == 0 || self.n_players < self.n_groups {
            return bad(format!(
                "need n_players >= n_groups >= 1, got {} players / {} groups",
                self.n_players, self.n_groups
            ));
        }
        if self.n_players > u32::MAX as usize {
            return bad("too many players".into());
        }
        for (name, p) in [
            ("intra_group_prob", self.intra_group_prob),
            ("inter_group_prob", self.inter_group_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0 < self.split_day && self.split_day < self.span_days) {
            return bad(format!(
                "split_day {} must lie strictly inside span {}",
                self.split_day, self.span_days
            ));
        }
        if self.modes.is_empty() || self.modes.len() > 32 {
            return bad("need 1..=32 gameplay modes".into());
        }
        if self.acquisition_sources == 0 || self.visual_dim == 0 {
            return bad("acquisition_sources and visual_dim must be positive".into());
        }
        if self.avatars_per_group == 0 && self.shared_avatars == 0 && self.archetypes.is_empty() {
            return bad("no avatars to hand out".into());
        }
        for (name, v) in [
            ("contacts_per_day", self.contacts_per_day),
            ("friendship_scale", self.friendship_scale),
            ("new_friends_per_player", self.new_friends_per_player),
            ("friend_noise", self.friend_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.friendship_scale == 0.0 || !self.friend_signal.is_finite() {
            return bad("friendship_scale must be positive and friend_signal finite".into());
        }
        if !self.archetypes.is_empty() {
            if self.archetypes.len() != self.n_groups {
                return bad(format!(
                    "{} archetypes for {} groups",
                    self.archetypes.len(),
                    self.n_groups
                ));
            }
            for a in &self.archetypes {
                if a.engagement.len() != self.modes.len()
                    || a.engagement.iter().any(|p| !(0.0..=1.0).contains(p))
                {
                    return bad("archetype engagement must be one probability per mode".into());
                }
                if a.avatar_pool.is_empty() && self.shared_avatars == 0 {
                    return bad("archetype without avatars".into());
                }
                if a.favored_source >= self.acquisition_sources || a.social_density < 0.0 {
                    return bad("archetype source or density out of range".into());
                }
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let n = cfg.n_players;
    let archetypes: Vec<GroupArchetype> = (0..cfg.n_groups).map(|g| cfg.archetype(g)).collect();
    let shared = cfg.shared_pool();
    let group: Vec<usize> = (0..n).map(|i| cfg.group_of(PlayerId(i as u32))).collect();

    let activity: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.4)).collect();
    let propensity: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            archetypes[group[i]]
                .engagement
                .iter()
                .map(|p| (p + 0.08 * unit.sample(&mut rng)).clamp(0.02, 0.98))
                .collect()
        })
        .collect();

    let mut players: Vec<PlayerRecord> = (0..n)
        .map(|i| PlayerRecord::new(PlayerId(i as u32), cfg.span_days))
        .collect();

    for day in 0..cfg.span_days {
        for i in 0..n {
            for (m, p) in propensity[i].iter().enumerate() {
                if rng.random::<f64>() < *p {
                    players[i].set_engaged(day, m);
                }
            }
            let g = group[i];
            let own = cfg.group_range(g);
            let rate = cfg.contacts_per_day * archetypes[g].social_density * activity[i];
            let attempts = rate.floor() as usize + usize::from(rng.random::<f64>() < rate.fract());
            for _ in 0..attempts {
                if own.len() > 1 {
                    let mut j = own.start + rng.random_range(0..own.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    if rng.random::<f64>() < cfg.intra_group_prob {
                        players[i].add_interaction(day, PlayerId(j as u32), 1);
                    }
                }
                let others = n - own.len();
                if others > 0 {
                    let k = rng.random_range(0..others);
                    let j = if k < own.start { k } else { k + own.len() };
                    if rng.random::<f64>() < cfg.inter_group_prob {
                        players[i].add_interaction(day, PlayerId(j as u32), 1);
                    }
                }
            }
        }
    }

    for i in 0..n {
        let arch = &archetypes[group[i]];
        let want = 1 + (activity[i] * 2.5 + rng.random::<f64>()).floor() as usize;
        let p = &mut players[i];
        for _ in 0..want * 4 {
            if p.inventory_size() >= want {
                break;
            }
            let from_group = !arch.avatar_pool.is_empty()
                && (shared.is_empty() || rng.random::<f64>() < 0.8);
            let pool = if from_group { &arch.avatar_pool } else { &shared };
            let avatar = AvatarId(pool[rng.random_range(0..pool.len())]);
            let source = if rng.random::<f64>() < 0.75 {
                arch.favored_source
            } else {
                rng.random_range(0..cfg.acquisition_sources)
            };
            p.avatar_acquisitions.entry(avatar).or_insert(source);
        }
        let inventory: Vec<AvatarId> = p.inventory().collect();
        p.displayed_avatar = Some(inventory[rng.random_range(0..inventory.len())]);
    }

    let mut embeddings = BTreeMap::new();
    for arch in &archetypes {
        let centroid: Vec<f64> = (0..cfg.visual_dim).map(|_| unit.sample(&mut rng)).collect();
        for a in &arch.avatar_pool {
            let v = centroid
                .iter()
                .map(|c| c + 0.35 * unit.sample(&mut rng))
                .collect();
            embeddings.entry(AvatarId(*a)).or_insert_with(|| normalized(v));
        }
    }
    for a in &shared {
        let v = (0..cfg.visual_dim).map(|_| unit.sample(&mut rng)).collect();
        embeddings.entry(AvatarId(*a)).or_insert_with(|| normalized(v));
    }
    let used = players
        .iter()
        .flat_map(|p| p.inventory())
        .collect::<std::collections::BTreeSet<_>>();
    embeddings.retain(|a, _| used.contains(a));

    // Existing friendships grow out of repeated training-window contact.
    let mut pair_weight: HashMap<(usize, usize), u32> = HashMap::new();
    for (i, p) in players.iter().enumerate() {
        for it in p.daily_interactions.iter().filter(|it| it.day < cfg.split_day) {
            let j = it.partner.0 as usize;
            *pair_weight.entry((i.min(j), i.max(j))).or_default() += it.count;
        }
    }
    let mut pairs: Vec<((usize, usize), u32)> = pair_weight.into_iter().collect();
    pairs.sort_unstable();
    for ((i, j), w) in pairs {
        if rng.random::<f64>() < 1.0 - (-(w as f64) / cfg.friendship_scale).exp() {
            players[i].friends_before.insert(PlayerId(j as u32));
            players[j].friends_before.insert(PlayerId(i as u32));
        }
    }

    let mut ds = Dataset::new(
        cfg.span_days,
        cfg.split_day,
        cfg.modes.clone(),
        cfg.acquisition_sources,
        players,
        embeddings,
    )?;

    // New friendships: log-odds linear in baseline cosine, plus noise.
    let baseline: Vec<Vec<f64>> = baseline_vectors(&ds)
        .into_iter()
        .map(normalized)
        .collect();
    let mut logits = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let cos: f64 = baseline[i].iter().zip(&baseline[j]).map(|(a, b)| a * b).sum();
            logits.push(cfg.friend_signal * cos + cfg.friend_noise * unit.sample(&mut rng));
        }
    }
    let eligible = |ds: &Dataset, i: usize, j: usize| {
        !ds.players[i].friends_before.contains(&PlayerId(j as u32))
    };
    let mut total = 0.0;
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if eligible(&ds, i, j) {
                total += logits[k].exp();
            }
            k += 1;
        }
    }
    let target_edges = n as f64 * cfg.new_friends_per_player / 2.0;
    let scale = if total > 0.0 { target_edges / total } else { 0.0 };
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            let draw: f64 = rng.random();
            if eligible(&ds, i, j) && draw < (scale * logits[k].exp()).min(1.0) {
                ds.players[i].friends_after.insert(PlayerId(j as u32));
                ds.players[j].friends_after.insert(PlayerId(i as u32));
            }
            k += 1;
        }
    }
    ds.validate()?;
    Ok(ds)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
