//! 2-D views of the preference channels: t-SNE projections, hexagonal bins
//! over them, and radial layouts of banded candidates.

mod hexbin;
mod tsne;

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PlayerId;
use crate::error::{Error, Result};
use crate::features::{Channel, Features};
use crate::pipeline::{BandedCandidates, BANDS};

pub use hexbin::{auto_radius, hex_of, hexbin, Axial, HexBin, HexbinGrid, MAX_BIN_SHARE};
pub use tsne::{effective_perplexity, tsne, TsneConfig, TsneOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub channel: Channel,
    pub seed: u64,
    pub perplexity: f64,
    pub kl_after_exaggeration: f64,
    pub kl_divergence: f64,
    pub coords: BTreeMap<PlayerId, [f64; 2]>,
}

/// t-SNE of one channel's vectors for `players` (all players when `None`).
pub fn project(
    features: &Features,
    channel: Channel,
    players: Option<&[PlayerId]>,
    cfg: &TsneConfig,
) -> Result<Projection2D> {
    let ids: Vec<PlayerId> = players.map_or_else(|| features.players().to_vec(), <[_]>::to_vec);
    let vectors = ids
        .iter()
        .map(|p| features.require(*p).map(|i| features.matrix(channel).row(i).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let out = tsne(&vectors, cfg)?;
    Ok(Projection2D {
        channel,
        seed: cfg.seed,
        perplexity: out.perplexity,
        kl_after_exaggeration: out.kl_after_exaggeration,
        kl_divergence: out.kl_final,
        coords: ids.into_iter().zip(out.coords).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPoint {
    pub player: PlayerId,
    pub band: usize,
    pub similarity: f64,
    pub radius: f64,
    pub angle: f64,
}

impl RadialPoint {
    pub fn xy(&self) -> [f64; 2] {
        [self.radius * self.angle.cos(), self.radius * self.angle.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialLayout {
    pub ring_radii: [f64; BANDS],
    pub points: Vec<RadialPoint>,
}

/// Band `i` sits on the ring of radius `i + 1`; angles are seeded-uniform.
pub fn radial_layout(bc: &BandedCandidates, seed: u64) -> RadialLayout {
    let mut rng = crate::seeded_rng(seed);
    let ring_radii = std::array::from_fn(|i| (i + 1) as f64);
    let mut points = Vec::new();
    for (band, members) in bc.bands.iter().enumerate() {
        for (player, similarity) in members {
            points.push(RadialPoint {
                player: *player,
                band,
                similarity: *similarity,
                radius: ring_radii[band],
                angle: rng.random_range(0.0..TAU),
            });
        }
    }
    RadialLayout { ring_radii, points }
}

/// Projections of every channel, each followed by its hex grid.
pub fn project_all(
    features: &Features,
    cfg: &TsneConfig,
    summaries: Option<&BTreeMap<PlayerId, Vec<f64>>>,
) -> Result<Vec<(Projection2D, HexbinGrid)>> {
    if features.len() < 3 {
        return Err(Error::InvalidArgument("projection needs at least 3 players".into()));
    }
    Channel::ALL
        .iter()
        .map(|&c| {
            let proj = project(features, c, None, cfg)?;
            let grid = hexbin(&proj.coords, auto_radius(&proj.coords), summaries)?;
            Ok((proj, grid))
        })
        .collect()
}
