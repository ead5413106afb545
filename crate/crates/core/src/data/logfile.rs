//! Line-delimited JSON log format.
//!
//! The first line is a header:
//!
//! ```text
//! {"span_days":60,"split_day":40,"modes":["pve","pvp","guild"],"acquisition_sources":4}
//! ```
//!
//! Every following line is one player-day record. All fields except `player`
//! and `day` are optional:
//!
//! ```text
//! {"player":7,"day":3,"interactions":[[12,2]],"modes":["pve"],"avatars":[[40,1]],"displayed":40,"friends":[12]}
//! ```
//!
//! `interactions` holds `[partner, count]` pairs, `avatars` holds
//! `[avatar, acquisition source]` pairs and `friends` lists friendships formed
//! on that day. Friendships formed before `split_day` become
//! `friends_before`, later ones `friends_after`.
//!
//! Visual embeddings live in a separate whitespace-separated text file, one
//! avatar per line: `avatar_id v0 v1 ...`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AvatarId, Dataset, PlayerId, PlayerRecord};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    span_days: u32,
    split_day: u32,
    #[serde(default = "super::default_modes")]
    modes: Vec<String>,
    #[serde(default = "default_sources")]
    acquisition_sources: u32,
}

fn default_sources() -> u32 {
    4
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DayRecord {
    player: u32,
    day: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interactions: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    modes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    avatars: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    displayed: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    friends: Vec<u32>,
}

pub fn parse_logs(path: impl AsRef<Path>) -> Result<Dataset> {
    read_logs(BufReader::new(File::open(path)?))
}

pub fn read_logs<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(Error::schema(1, "missing header line")),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| Error::schema(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if !(0 < header.split_day && header.split_day < header.span_days) {
        return Err(Error::InvalidConfig(format!(
            "split_day {} must lie strictly inside span 0..{}",
            header.split_day, header.span_days
        )));
    }
    let mode_index: BTreeMap<&str, usize> = header
        .modes
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();

    let mut players: BTreeMap<PlayerId, PlayerRecord> = BTreeMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DayRecord = serde_json::from_str(&line)
            .map_err(|e| Error::schema(lineno, format!("bad record: {e}")))?;
        if rec.day >= header.span_days {
            return Err(Error::schema(
                lineno,
                format!("day {} outside span {}", rec.day, header.span_days),
            ));
        }
        let id = PlayerId(rec.player);
        let p = players
            .entry(id)
            .or_insert_with(|| PlayerRecord::new(id, header.span_days));
        for (partner, count) in rec.interactions {
            if count == 0 {
                return Err(Error::schema(lineno, "interaction count must be positive"));
            }
            p.add_interaction(rec.day, PlayerId(partner), count);
        }
        for mode in &rec.modes {
            let m = *mode_index
                .get(mode.as_str())
                .ok_or_else(|| Error::schema(lineno, format!("unknown mode {mode:?}")))?;
            p.set_engaged(rec.day, m);
        }
        for (avatar, source) in rec.avatars {
            if let Some(prev) = p.avatar_acquisitions.insert(AvatarId(avatar), source) {
                if prev != source {
                    return Err(Error::schema(
                        lineno,
                        format!("avatar {avatar} acquired from two sources"),
                    ));
                }
            }
        }
        if let Some(d) = rec.displayed {
            match p.displayed_avatar {
                Some(prev) if prev.0 != d => {
                    return Err(Error::schema(
                        lineno,
                        format!("player {id} displays two avatars"),
                    ));
                }
                _ => p.displayed_avatar = Some(AvatarId(d)),
            }
        }
        for f in rec.friends {
            let target = if rec.day < header.split_day {
                &mut p.friends_before
            } else {
                &mut p.friends_after
            };
            target.insert(PlayerId(f));
        }
    }

    Dataset::new(
        header.span_days,
        header.split_day,
        header.modes,
        header.acquisition_sources,
        players.into_values().collect(),
        BTreeMap::new(),
    )
}

pub fn write_logs<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        span_days: ds.span_days,
        split_day: ds.split_day,
        modes: ds.modes.clone(),
        acquisition_sources: ds.acquisition_sources,
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for p in &ds.players {
        let mut days: BTreeMap<u32, DayRecord> = BTreeMap::new();
        let first = day_entry(&mut days, p.id, 0);
        first.avatars = p.avatar_acquisitions.iter().map(|(a, s)| (a.0, *s)).collect();
        first.displayed = p.displayed_avatar.map(|a| a.0);
        first.friends = p.friends_before.iter().map(|f| f.0).collect();
        if !p.friends_after.is_empty() {
            day_entry(&mut days, p.id, ds.split_day).friends =
                p.friends_after.iter().map(|f| f.0).collect();
        }
        for i in &p.daily_interactions {
            day_entry(&mut days, p.id, i.day)
                .interactions
                .push((i.partner.0, i.count));
        }
        for (d, mask) in p.daily_gameplay.iter().enumerate() {
            if *mask != 0 {
                day_entry(&mut days, p.id, d as u32).modes = ds
                    .modes
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| mask & (1 << m) != 0)
                    .map(|(_, name)| name.clone())
                    .collect();
            }
        }
        for rec in days.values() {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn day_entry(days: &mut BTreeMap<u32, DayRecord>, player: PlayerId, d: u32) -> &mut DayRecord {
    days.entry(d).or_insert_with(|| DayRecord {
        player: player.0,
        day: d,
        ..Default::default()
    })
}

pub fn parse_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<AvatarId, Vec<f64>>> {
    read_embeddings(BufReader::new(File::open(path)?))
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<BTreeMap<AvatarId, Vec<f64>>> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let id: u32 = id
            .parse()
            .map_err(|_| Error::schema(lineno, format!("bad avatar id {id:?}")))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::schema(lineno, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::schema(lineno, "empty embedding"));
        }
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(Error::schema(
                lineno,
                format!("expected {} values, got {}", dim.unwrap_or(0), values.len()),
            ));
        }
        if out.insert(AvatarId(id), values).is_some() {
            return Err(Error::schema(lineno, format!("duplicate avatar {id}")));
        }
    }
    Ok(out)
}

pub fn write_embeddings<W: Write>(emb: &BTreeMap<AvatarId, Vec<f64>>, mut w: W) -> Result<()> {
    for (id, values) in emb {
        write!(w, "{id}")?;
        for v in values {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

impl Dataset {
    /// Loads a log file and, optionally, its avatar embedding file.
    pub fn load(logs: impl AsRef<Path>, embeddings: Option<&Path>) -> Result<Dataset> {
        let ds = parse_logs(logs)?;
        match embeddings {
            Some(path) => ds.with_embeddings(parse_embeddings(path)?),
            None => Ok(ds),
        }
    }

    pub fn with_embeddings(mut self, emb: BTreeMap<AvatarId, Vec<f64>>) -> Result<Dataset> {
        self.avatar_visual_embeddings = emb;
        self.validate()?;
        Ok(self)
    }

    /// All avatar ids referenced by any player.
    pub fn referenced_avatars(&self) -> BTreeSet<AvatarId> {
        self.players.iter().flat_map(|p| p.inventory()).collect()
    }
}
