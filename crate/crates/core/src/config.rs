//! Run configuration: one TOML file with a section per module.
//!
//! ```toml
//! seed = 0
//! [data]        # datagen::DataConfig
//! [lifter]      # lifter::LifterConfig
//! [train]       # training::TrainConfig
//! [adapt]       # adaptation::AdaptConfig
//! [eval]        # experiments::EvalConfig
//! [experiment]  # experiments::ExperimentConfig
//! ```
//!
//! Every field has a default, unknown keys are rejected, and the whole config
//! is validated after loading. Command-line flags are applied on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::AdaptConfig;
use crate::datagen::DataConfig;
use crate::error::{Error, Result};
use crate::experiments::{EvalConfig, ExperimentConfig};
use crate::lifter::LifterConfig;
use crate::skeleton::default_topology;
use crate::training::{hex, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for dataset generation; `--seed` also sets `lifter.seed` and `train.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub lifter: LifterConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Sets every seed in the config.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.lifter.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>, section: &str| {
            r.map_err(|e| Error::Config(format!("[{section}] {e}")))
        };
        wrap(self.data.validate(), "data")?;
        wrap(self.lifter.validate(), "lifter")?;
        wrap(self.train.validate(), "train")?;
        wrap(self.adapt.validate(), "adapt")?;
        wrap(self.eval.validate(), "eval")?;
        wrap(self.experiment.validate(), "experiment")?;
        let topo = default_topology();
        if self.lifter.joints != topo.num_joints() || self.lifter.root != topo.root() {
            return Err(Error::Config(format!(
                "[lifter] joints/root must be {}/{} for the built-in skeleton",
                topo.num_joints(),
                topo.root()
            )));
        }
        if self.data.frames < self.lifter.frames + 2 * self.train.windows_per_split() {
            return Err(Error::Config(format!(
                "[data] frames = {} is too short for {}-frame windows and {} disjoint windows per task",
                self.data.frames,
                self.lifter.frames,
                2 * self.train.windows_per_split()
            )));
        }
        Ok(())
    }
}
