//! A loaded dataset with everything sessions read from it: features, the
//! trained ranker and the per-channel projections.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sdrec_core::data::{generate_synthetic, Dataset, PlayerId, SyntheticConfig};
use sdrec_core::features::{baseline_attributes, build_preferences, Channel, Features};
use sdrec_core::projection::{auto_radius, hexbin, project, HexbinGrid, Projection2D};
use sdrec_core::ranker::{build_training_set, train, GbdtModel};

use crate::config::Config;
use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Files {
        logs: PathBuf,
        #[serde(default)]
        embeddings: Option<PathBuf>,
    },
}

impl DatasetSource {
    /// Stable id derived from the source description.
    pub fn id(&self) -> String {
        let text = serde_json::to_string(self).expect("source serialises");
        // FNV-1a; stable across builds, unlike the std hasher
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("ds-{h:016x}")
    }

    pub fn load(&self) -> ServiceResult<Dataset> {
        match self {
            DatasetSource::Synthetic(cfg) => Ok(generate_synthetic(cfg)?),
            DatasetSource::Files { logs, embeddings } => {
                if !logs.exists() {
                    return Err(ServiceError::NotFound(format!("log file {}", logs.display())));
                }
                if let Some(e) = embeddings.as_ref().filter(|e| !e.exists()) {
                    return Err(ServiceError::NotFound(format!("embedding file {}", e.display())));
                }
                Ok(Dataset::load(logs, embeddings.as_deref())?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub player_count: usize,
    pub mean_friends_before: f64,
    pub mean_friends_after: f64,
    pub span_days: u32,
    pub split_day: u32,
    pub modes: Vec<String>,
    pub channel_dims: BTreeMap<Channel, usize>,
}

pub struct DatasetEntry {
    pub id: String,
    pub source: DatasetSource,
    pub dataset: Dataset,
    pub features: Features,
    pub model: GbdtModel,
    pub projections: BTreeMap<Channel, (Projection2D, HexbinGrid)>,
    /// Raw baseline attributes per player, for parallel coordinates and bin means.
    pub attributes: BTreeMap<PlayerId, Vec<f64>>,
    pub summary: DatasetSummary,
}

/// Names of the columns in [`DatasetEntry::attributes`].
pub fn attribute_names(ds: &Dataset) -> Vec<String> {
    let mut names = vec!["log_interactions".to_string()];
    names.extend(ds.modes.iter().map(|m| format!("{m}_days")));
    names.push("friends".into());
    names.push("inventory".into());
    names
}

/// Reports `(stage, fraction)`; returning `false` cancels the build.
pub type Progress<'a> = &'a mut dyn FnMut(&str, f64) -> bool;

pub fn build_dataset(source: DatasetSource, cfg: &Config, progress: Progress<'_>) -> ServiceResult<DatasetEntry> {
    let mut step = |stage: &str, f: f64| if progress(stage, f) { Ok(()) } else { Err(ServiceError::Cancelled) };
    step("load", 0.0)?;
    let dataset = source.load()?;
    if dataset.len() < 3 {
        return Err(ServiceError::BadRequest("a dataset needs at least 3 players".into()));
    }
    step("features", 0.1)?;
    let features = build_preferences(&dataset, &cfg.features)?;
    step("train", 0.4)?;
    let set = build_training_set(&dataset, &features, cfg.recommend.seed)?;
    let model = train(&set, &cfg.gbdt, cfg.recommend.seed)?;
    let attributes: BTreeMap<PlayerId, Vec<f64>> = dataset.player_ids().zip(baseline_attributes(&dataset)).collect();
    let mut projections = BTreeMap::new();
    for (i, c) in Channel::ALL.into_iter().enumerate() {
        step(&format!("projection:{c}"), 0.5 + 0.125 * i as f64)?;
        let proj = project(&features, c, None, &cfg.tsne)?;
        let grid = hexbin(&proj.coords, auto_radius(&proj.coords), Some(&attributes))?;
        projections.insert(c, (proj, grid));
    }
    step("done", 1.0)?;
    let id = source.id();
    let summary = DatasetSummary {
        id: id.clone(),
        player_count: dataset.len(),
        mean_friends_before: dataset.mean_friends_before(),
        mean_friends_after: dataset.mean_friends_after(),
        span_days: dataset.span_days,
        split_day: dataset.split_day,
        modes: dataset.modes.clone(),
        channel_dims: Channel::ALL.iter().map(|c| (*c, features.dim(*c))).collect(),
    };
    Ok(DatasetEntry {
        id,
        source,
        dataset,
        features,
        model,
        projections,
        attributes,
        summary,
    })
}
