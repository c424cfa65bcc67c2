//! Versioned TOML configuration of the whole pipeline.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TdcfNormalization;
use crate::synth::{PretrainConfig, WorldConfig};
use crate::train::TrainConfig;
use crate::types::TandemCostParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Settings of the multi-seed comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of repetitions; seed `k` uses `train.seed + k`.
    pub seeds: usize,
    /// Attacks removed for the filtered eval report.
    pub exclude_attacks: Vec<String>,
    pub normalization: TdcfNormalization,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: 3,
            exclude_attacks: vec!["A17".into(), "A18".into()],
            normalization: TdcfNormalization::BestTrivialGate,
        }
    }
}

impl ExperimentConfig {
    pub fn excluded(&self) -> BTreeSet<String> {
        self.exclude_attacks.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub costs: TandemCostParams,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            world: WorldConfig::default(),
            costs: TandemCostParams::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.world.validate()?;
        self.costs.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        if self.experiment.seeds == 0 {
            return Err(Error::Config("experiment.seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
