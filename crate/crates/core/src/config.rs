//! The TOML run configuration shared by all CLI subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixture::FixtureSpec;
use crate::system::ArchConfig;
use crate::train::{NamedRun, ProxyConfig, TrainConfig};

/// Data locations. Relative paths are taken relative to the working
/// directory; command-line flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    /// Noise listing used for online augmentation.
    pub train_noise: Option<PathBuf>,
    /// Noise listing used to build test sets; must not share clips with
    /// `train_noise`.
    pub eval_noise: Option<PathBuf>,
    pub protocol: Option<PathBuf>,
    pub test_sets: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub fixture: FixtureSpec,
    pub proxy: ProxyConfig,
    /// Runs of the `ablate` subcommand.
    pub ablation: Vec<NamedRun>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fails only for values TOML cannot hold, such as seeds above `i64::MAX`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot write config as TOML: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.fixture.validate()?;
        for r in &self.ablation {
            r.train.validate()?;
        }
        Ok(())
    }

    /// Applies a global seed override. The global seed drives the trainer,
    /// the proxy pre-training and every generator that takes a seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.proxy.seed = self.seed;
        self
    }
}
