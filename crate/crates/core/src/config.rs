//! JSON run configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected so a typo cannot silently leave a weight at its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boc::BocPresets;
use crate::enhancer::OptimizerConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::segmentation::SegParams;

/// Where contrastive sample features come from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureBank {
    /// The built-in filter bank, applied to positive images and their negatives.
    #[default]
    Builtin,
    /// Pre-extracted `PIEF` pyramids in `positive/`, `negative_under/` and
    /// `negative_over/` subdirectories.
    External(PathBuf),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub boc: BocPresets,
    pub segmentation: SegParams,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub feature_bank: FeatureBank,
    /// Batch worker threads; 0 uses one per available core.
    pub workers: usize,
    pub seed: u64,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.boc.validate().map_err(qualify("boc"))?;
        self.segmentation.validate().map_err(qualify("segmentation"))?;
        self.optimizer.validate().map_err(qualify("optimizer"))?;
        self.loss_weights.validate().map_err(qualify("loss_weights"))?;
        Ok(())
    }
}

/// Prefixes a parameter error with its config section.
fn qualify(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidParameter { name, reason } => {
            Error::Config(format!("invalid value for `{section}.{name}`: {reason}"))
        }
        other => other,
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    Config::from_json(&text)
}
