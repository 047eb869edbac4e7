//! The run configuration file: one TOML document holding the generator,
//! training and baseline settings plus shared defaults. Unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vkge_core::data::SynthConfig;
use vkge_core::error::{Error, Result};
use vkge_core::kge::KgeTrainConfig;
use vkge_core::training::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the seed of every section.
    pub seed: Option<u64>,
    /// Default task list for `eval` when `--task` is not given.
    pub tasks: Option<Vec<String>>,
    /// Default output directory for commands that take `--out`.
    pub out_dir: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub train: Option<TrainConfig>,
    pub kge: Option<KgeTrainConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let mut cfg = self
            .synth
            .clone()
            .ok_or_else(|| Error::Config("config file has no [synth] section".into()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = self.train.clone().unwrap_or_default();
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kge_config(&self) -> Result<KgeTrainConfig> {
        let mut cfg = self.kge.clone().unwrap_or_default();
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.kge.validate()?;
        Ok(cfg)
    }
}
