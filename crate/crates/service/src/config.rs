//! Service defaults, overridable from a TOML file and the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdrec_core::features::FeatureConfig;
use sdrec_core::pipeline::{DEFAULT_K, DEFAULT_M};
use sdrec_core::projection::TsneConfig;
use sdrec_core::propagation::{PropagationConfig, SimilarityConfig};
use sdrec_core::ranker::{GbdtParams, DEFAULT_N};

/// Overrides [`Config::data_dir`].
pub const DATA_DIR_ENV: &str = "SDREC_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommendConfig {
    /// Candidates retrieved per channel.
    pub k: usize,
    /// Size of the fused pool.
    pub m: usize,
    /// Length of the ranked list.
    pub n: usize,
    pub seed: u64,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig {
            k: DEFAULT_K,
            m: DEFAULT_M,
            n: DEFAULT_N,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data_dir: PathBuf,
    pub listen: String,
    pub recommend: RecommendConfig,
    pub features: FeatureConfig,
    pub gbdt: GbdtParams,
    pub similarity: SimilarityConfig,
    pub propagation: PropagationConfig,
    pub tsne: TsneConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("sdrec-data"),
            listen: "127.0.0.1:8080".into(),
            recommend: RecommendConfig::default(),
            features: FeatureConfig::default(),
            gbdt: GbdtParams::default(),
            similarity: SimilarityConfig::default(),
            propagation: PropagationConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

impl Config {
    /// Defaults, then `path` if given, then the environment.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("reading config {}: {e}", p.display()))?;
                Self::from_toml(&text)?
            }
            None => Config::default(),
        };
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            cfg.data_dir = dir.into();
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
