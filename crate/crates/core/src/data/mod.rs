//! Player records, datasets and the temporal train/test split.

mod logfile;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use logfile::{
    parse_embeddings, parse_logs, read_embeddings, read_logs, write_embeddings, write_logs,
};
pub use synthetic::{generate_synthetic, GroupArchetype, SyntheticConfig};

pub const DEFAULT_SPAN_DAYS: u32 = 60;
pub const DEFAULT_SPLIT_DAY: u32 = 40;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AvatarId(pub u32);

impl fmt::Display for AvatarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One interaction event count between the record owner and a partner on a day.
///
/// Interactions are undirected; an event is recorded once, by either side.
/// The count is the raw number of logged events, not a duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub day: u32,
    pub partner: PlayerId,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRecord {
    pub id: PlayerId,
    /// Sorted by `(day, partner)`, at most one entry per pair.
    pub daily_interactions: Vec<Interaction>,
    /// One engagement bitmask per day; bit `m` is mode `m` of the dataset.
    pub daily_gameplay: Vec<u32>,
    /// Owned avatars with their acquisition source. The key set is the inventory.
    pub avatar_acquisitions: BTreeMap<AvatarId, u32>,
    pub displayed_avatar: Option<AvatarId>,
    pub friends_before: BTreeSet<PlayerId>,
    pub friends_after: BTreeSet<PlayerId>,
}

impl PlayerRecord {
    pub fn new(id: PlayerId, span_days: u32) -> Self {
        PlayerRecord {
            id,
            daily_interactions: Vec::new(),
            daily_gameplay: vec![0; span_days as usize],
            avatar_acquisitions: BTreeMap::new(),
            displayed_avatar: None,
            friends_before: BTreeSet::new(),
            friends_after: BTreeSet::new(),
        }
    }

    pub fn inventory(&self) -> impl Iterator<Item = AvatarId> + '_ {
        self.avatar_acquisitions.keys().copied()
    }

    pub fn inventory_size(&self) -> usize {
        self.avatar_acquisitions.len()
    }

    pub fn engaged(&self, day: u32, mode: usize) -> bool {
        self.daily_gameplay
            .get(day as usize)
            .is_some_and(|mask| mask & (1 << mode) != 0)
    }

    pub fn set_engaged(&mut self, day: u32, mode: usize) {
        self.daily_gameplay[day as usize] |= 1 << mode;
    }

    /// Adds `count` events with `partner` on `day`, merging with an existing entry.
    pub fn add_interaction(&mut self, day: u32, partner: PlayerId, count: u32) {
        let key = (day, partner);
        match self
            .daily_interactions
            .binary_search_by(|i| (i.day, i.partner).cmp(&key))
        {
            Ok(pos) => self.daily_interactions[pos].count += count,
            Err(pos) => self.daily_interactions.insert(
                pos,
                Interaction {
                    day,
                    partner,
                    count,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub span_days: u32,
    pub split_day: u32,
    /// Gameplay mode names, indexed by engagement bit.
    pub modes: Vec<String>,
    /// Number of distinct avatar acquisition sources.
    pub acquisition_sources: u32,
    /// Sorted by id.
    pub players: Vec<PlayerRecord>,
    pub avatar_visual_embeddings: BTreeMap<AvatarId, Vec<f64>>,
}

pub fn default_modes() -> Vec<String> {
    ["pve", "pvp", "guild"].iter().map(|s| s.to_string()).collect()
}

impl Dataset {
    /// Builds a dataset, sorting players by id and checking every invariant.
    pub fn new(
        span_days: u32,
        split_day: u32,
        modes: Vec<String>,
        acquisition_sources: u32,
        mut players: Vec<PlayerRecord>,
        avatar_visual_embeddings: BTreeMap<AvatarId, Vec<f64>>,
    ) -> Result<Self> {
        players.sort_by_key(|p| p.id);
        let ds = Dataset {
            span_days,
            split_day,
            modes,
            acquisition_sources,
            players,
            avatar_visual_embeddings,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(span_days: u32, split_day: u32) -> Result<Self> {
        Self::new(
            span_days,
            split_day,
            default_modes(),
            4,
            Vec::new(),
            BTreeMap::new(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.split_day && self.split_day < self.span_days) {
            return Err(Error::InvalidConfig(format!(
                "split_day {} must lie strictly inside span 0..{}",
                self.split_day, self.span_days
            )));
        }
        if self.modes.is_empty() || self.modes.len() > 32 {
            return Err(Error::InvalidConfig(format!(
                "expected 1..=32 gameplay modes, got {}",
                self.modes.len()
            )));
        }
        if self.acquisition_sources == 0 {
            return Err(Error::InvalidConfig(
                "at least one acquisition source is required".into(),
            ));
        }
        for w in self.players.windows(2) {
            if w[0].id >= w[1].id {
                return Err(Error::invariant(
                    w[1].id,
                    "players must be unique and sorted by id",
                ));
            }
        }
        let mode_mask = if self.modes.len() == 32 {
            u32::MAX
        } else {
            (1u32 << self.modes.len()) - 1
        };
        let embedding_dim = self.avatar_visual_embeddings.values().next().map(Vec::len);
        for (avatar, v) in &self.avatar_visual_embeddings {
            if Some(v.len()) != embedding_dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "embedding for avatar {avatar} has inconsistent dimension or non-finite values"
                )));
            }
        }
        for p in &self.players {
            self.validate_player(p, mode_mask)?;
        }
        Ok(())
    }

    fn validate_player(&self, p: &PlayerRecord, mode_mask: u32) -> Result<()> {
        if p.daily_gameplay.len() != self.span_days as usize {
            return Err(Error::invariant(p.id, "gameplay flags must cover the span"));
        }
        if p.daily_gameplay.iter().any(|m| m & !mode_mask != 0) {
            return Err(Error::invariant(p.id, "gameplay flag for an unknown mode"));
        }
        for pair in p.daily_interactions.windows(2) {
            if (pair[0].day, pair[0].partner) >= (pair[1].day, pair[1].partner) {
                return Err(Error::invariant(
                    p.id,
                    "interactions must be sorted and unique per (day, partner)",
                ));
            }
        }
        for i in &p.daily_interactions {
            if i.partner == p.id {
                return Err(Error::invariant(p.id, "self-interaction"));
            }
            if i.day >= self.span_days {
                return Err(Error::invariant(
                    p.id,
                    format!("interaction day {} outside span", i.day),
                ));
            }
            if i.count == 0 {
                return Err(Error::invariant(p.id, "zero interaction count"));
            }
            if self.player(i.partner).is_none() {
                return Err(Error::invariant(
                    p.id,
                    format!("interaction with unknown player {}", i.partner),
                ));
            }
        }
        match p.displayed_avatar {
            Some(a) if !p.avatar_acquisitions.contains_key(&a) => {
                return Err(Error::invariant(
                    p.id,
                    format!("displayed avatar {a} is not in the inventory"),
                ));
            }
            None if !p.avatar_acquisitions.is_empty() => {
                return Err(Error::invariant(p.id, "non-empty inventory without a displayed avatar"));
            }
            _ => {}
        }
        if let Some((a, s)) = p
            .avatar_acquisitions
            .iter()
            .find(|(_, s)| **s >= self.acquisition_sources)
        {
            return Err(Error::invariant(
                p.id,
                format!("avatar {a} has unknown acquisition source {s}"),
            ));
        }
        if !self.avatar_visual_embeddings.is_empty() {
            if let Some(a) = p
                .inventory()
                .find(|a| !self.avatar_visual_embeddings.contains_key(a))
            {
                return Err(Error::MissingEmbedding(a));
            }
        }
        if let Some(f) = p.friends_before.intersection(&p.friends_after).next() {
            return Err(Error::invariant(
                p.id,
                format!("player {f} is both an existing and a new friend"),
            ));
        }
        for f in p.friends_before.iter().chain(&p.friends_after) {
            if *f == p.id {
                return Err(Error::invariant(p.id, "self-friendship"));
            }
            if self.player(*f).is_none() {
                return Err(Error::invariant(p.id, format!("friend {f} is unknown")));
            }
        }
        Ok(())
    }

    pub fn player(&self, id: PlayerId) -> Option<&PlayerRecord> {
        self.players
            .binary_search_by_key(&id, |p| p.id)
            .ok()
            .map(|i| &self.players[i])
    }

    pub fn player_ids(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.players.iter().map(|p| p.id)
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }

    pub fn visual_dim(&self) -> usize {
        self.avatar_visual_embeddings
            .values()
            .next()
            .map_or(0, Vec::len)
    }

    pub fn mean_friends_before(&self) -> f64 {
        mean(self.players.iter().map(|p| p.friends_before.len() as f64))
    }

    pub fn mean_friends_after(&self) -> f64 {
        mean(self.players.iter().map(|p| p.friends_after.len() as f64))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The part of a dataset visible while training: days before the split and
/// friendships that existed before it.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    ds: &'a Dataset,
}

impl<'a> TrainView<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    pub fn days(&self) -> Range<u32> {
        0..self.ds.split_day
    }

    /// The last `len` training days (fewer if the training window is shorter).
    pub fn trailing_days(&self, len: u32) -> Range<u32> {
        self.ds.split_day.saturating_sub(len)..self.ds.split_day
    }

    pub fn interactions(&self, player: &'a PlayerRecord) -> impl Iterator<Item = &'a Interaction> {
        let split = self.ds.split_day;
        player
            .daily_interactions
            .iter()
            .take_while(move |i| i.day < split)
    }

    pub fn friends(&self, player: &'a PlayerRecord) -> &'a BTreeSet<PlayerId> {
        &player.friends_before
    }
}

/// Ranking labels: friendships formed during the test window.
#[derive(Debug, Clone, Copy)]
pub struct TestView<'a> {
    ds: &'a Dataset,
}

impl<'a> TestView<'a> {
    pub fn window(&self) -> Range<u32> {
        self.ds.split_day..self.ds.span_days
    }

    pub fn labels(&self, player: PlayerId) -> Option<&'a BTreeSet<PlayerId>> {
        self.ds.player(player).map(|p| &p.friends_after)
    }

    pub fn interactions(&self, player: &'a PlayerRecord) -> impl Iterator<Item = &'a Interaction> {
        let split = self.ds.split_day;
        player
            .daily_interactions
            .iter()
            .skip_while(move |i| i.day < split)
    }
}

pub fn temporal_split(ds: &Dataset) -> (TrainView<'_>, TestView<'_>) {
    (TrainView { ds }, TestView { ds })
}
