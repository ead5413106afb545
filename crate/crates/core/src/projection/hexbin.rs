//! Pointy-top hexagonal binning in axial coordinates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::PlayerId;
use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Share of points the densest bin may hold under [`auto_radius`].
pub const MAX_BIN_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Axial {
    pub q: i32,
    pub r: i32,
}

impl Axial {
    pub fn center(self, radius: f64) -> [f64; 2] {
        [
            radius * SQRT3 * (self.q as f64 + self.r as f64 / 2.0),
            radius * 1.5 * self.r as f64,
        ]
    }
}

/// The hex containing `(x, y)`.
pub fn hex_of(point: [f64; 2], radius: f64) -> Axial {
    let q = (SQRT3 / 3.0 * point[0] - point[1] / 3.0) / radius;
    let r = (2.0 / 3.0 * point[1]) / radius;
    cube_round(q, r, -q - r)
}

fn cube_round(x: f64, z: f64, y: f64) -> Axial {
    let (mut rx, ry, mut rz) = (x.round(), y.round(), z.round());
    let (dx, dy, dz) = ((rx - x).abs(), (ry - y).abs(), (rz - z).abs());
    if dx > dy && dx > dz {
        rx = -ry - rz;
    } else if dy <= dz {
        rz = -rx - ry;
    }
    Axial {
        q: rx as i32,
        r: rz as i32,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexBin {
    pub hex: Axial,
    pub center: [f64; 2],
    pub count: usize,
    pub members: Vec<PlayerId>,
    /// Mean of the members' summary vectors.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexbinGrid {
    pub radius: f64,
    /// Sorted by hex coordinate.
    pub bins: Vec<HexBin>,
}

impl HexbinGrid {
    pub fn bin(&self, hex: Axial) -> Option<&HexBin> {
        self.bins.binary_search_by_key(&hex, |b| b.hex).ok().map(|i| &self.bins[i])
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn max_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).max().unwrap_or(0)
    }
}

/// Bins `points`; `summaries` (per player, equal length) are averaged per bin.
pub fn hexbin(
    points: &BTreeMap<PlayerId, [f64; 2]>,
    radius: f64,
    summaries: Option<&BTreeMap<PlayerId, Vec<f64>>>,
) -> Result<HexbinGrid> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("hex radius must be positive, got {radius}")));
    }
    let mut bins: BTreeMap<Axial, (Vec<PlayerId>, Vec<f64>)> = BTreeMap::new();
    for (p, xy) in points {
        let entry = bins.entry(hex_of(*xy, radius)).or_default();
        entry.0.push(*p);
        if let Some(s) = summaries.and_then(|m| m.get(p)) {
            if entry.1.is_empty() {
                entry.1 = vec![0.0; s.len()];
            }
            if entry.1.len() != s.len() {
                return Err(Error::DimensionMismatch {
                    left: entry.1.len(),
                    right: s.len(),
                });
            }
            entry.1.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
    }
    let bins = bins
        .into_iter()
        .map(|(hex, (members, sum))| HexBin {
            hex,
            center: hex.center(radius),
            count: members.len(),
            mean: sum.iter().map(|v| v / members.len() as f64).collect(),
            members,
        })
        .collect();
    Ok(HexbinGrid { radius, bins })
}

/// Largest radius (shrinking geometrically from a tenth of the extent) whose
/// densest bin holds at most [`MAX_BIN_SHARE`] of the points.
pub fn auto_radius(points: &BTreeMap<PlayerId, [f64; 2]>) -> f64 {
    let n = points.len();
    if n == 0 {
        return 1.0;
    }
    let (mut min, mut max) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points.values() {
        for d in 0..2 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
        }
    }
    let extent = (max[0] - min[0]).max(max[1] - min[1]);
    if !(extent > 0.0) {
        return 1.0;
    }
    let cap = ((MAX_BIN_SHARE * n as f64).floor() as usize).max(1);
    let mut radius = extent / 10.0;
    for _ in 0..200 {
        let densest = {
            let mut counts: BTreeMap<Axial, usize> = BTreeMap::new();
            for p in points.values() {
                *counts.entry(hex_of(*p, radius)).or_default() += 1;
            }
            counts.into_values().max().unwrap_or(0)
        };
        if densest <= cap {
            break;
        }
        radius *= 0.8;
    }
    radius
}
