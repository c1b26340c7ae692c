//! Run configuration. Every field has a default, so a config file only
//! needs the values it overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dfc_agent::RldfcdoConfig;
use dfc_core::circuit::{ParamBounds, TemplateSpec};
use dfc_core::env::EnvConfig;
use dfc_core::surrogate::{FrequencyGrid, SurrogateConfig};
use dfc_gnn::{GatConfig, SurrogateTrainConfig};
use serde::{Deserialize, Serialize};

use crate::task::BandwidthBucket;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: FrequencyGrid,
    pub surrogate: SurrogateConfig,
    pub bounds: ParamBounds,
    pub template: TemplateSpec,
    pub env: EnvConfig,
    pub rldfcdo: RldfcdoConfig,
    pub bri_candidates: usize,
    pub gat: GatConfig,
    pub surrogate_train: SurrogateTrainConfig,
    pub dataset_samples: usize,
    /// Parameter file for the GAT oracle.
    pub gnn_checkpoint: Option<PathBuf>,
    pub buckets: Vec<BandwidthBucket>,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: FrequencyGrid::default(),
            surrogate: SurrogateConfig::default(),
            bounds: ParamBounds::default(),
            template: TemplateSpec::chain(4),
            env: EnvConfig::default(),
            rldfcdo: RldfcdoConfig::default(),
            bri_candidates: 2000,
            gat: GatConfig::default(),
            surrogate_train: SurrogateTrainConfig::default(),
            dataset_samples: 5000,
            gnn_checkpoint: None,
            buckets: BandwidthBucket::table(),
            workers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).context("parsing config")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        FrequencyGrid::new(self.grid.f_min, self.grid.f_max, self.grid.n_points)?;
        self.surrogate.check()?;
        self.bounds.check()?;
        self.template.check()?;
        self.env.check()?;
        self.rldfcdo.ppo.check()?;
        self.surrogate_train.check()?;
        if self.bri_candidates == 0 {
            bail!("bri_candidates must be positive");
        }
        if self.workers == 0 {
            bail!("workers must be positive");
        }
        if self.buckets.is_empty() || self.buckets.iter().any(|b| !b.is_valid()) {
            bail!("bandwidth buckets need lo <= hi, positive widths and positive weights");
        }
        Ok(())
    }
}
