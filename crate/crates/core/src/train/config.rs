use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::backends::BackendKind;
use crate::error::{Error, Result};
use crate::nn::ReduceOnPlateau;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendInit {
    Random,
    /// A front-end checkpoint written by `train-frontend` (internal names).
    Pretrained { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedBackend {
    /// Weight-manifest directory.
    pub manifest: PathBuf,
    /// `external<TAB>internal` name map. Conformer backends default to the
    /// built-in encoder mapping.
    #[serde(default)]
    pub name_map: Option<PathBuf>,
    #[serde(default)]
    pub allow_partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

/// Dev quantity that decides which epoch is kept as `best`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectOn {
    /// Classification loss only; comparable across systems with and
    /// without a front-end.
    #[default]
    Ce,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub backend: BackendKind,
    pub use_frontend: bool,
    pub frontend_init: FrontendInit,
    pub frontend_frozen: bool,
    pub backend_pretrained: Option<PretrainedBackend>,
    /// Online corruption policy; `None` trains on clean audio only.
    pub augmentation: Option<AugmentationPolicy>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Monitors the dev total loss.
    pub scheduler: ReduceOnPlateau,
    pub select_on: SelectOn,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub w_mse: f64,
    /// Training crop length; shorter utterances are repeated to fill it.
    pub crop_secs: f64,
    /// Mask-only epochs run before joint training when the front-end starts
    /// from random weights.
    pub frontend_pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Conformer,
            use_frontend: false,
            frontend_init: FrontendInit::Random,
            frontend_frozen: false,
            backend_pretrained: None,
            augmentation: None,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            scheduler: ReduceOnPlateau::default(),
            select_on: SelectOn::Ce,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            w_mse: 1.0,
            crop_secs: 4.0,
            frontend_pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frontend_frozen && !self.use_frontend {
            return Err(Error::config("frontend_frozen requires use_frontend"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.crop_secs > 0.0 && self.crop_secs.is_finite()) {
            return Err(Error::config(format!("crop_secs must be positive, got {}", self.crop_secs)));
        }
        if !(self.w_mse >= 0.0 && self.w_mse.is_finite()) {
            return Err(Error::config(format!("w_mse must be non-negative, got {}", self.w_mse)));
        }
        self.scheduler.validate()?;
        if let Some(p) = &self.augmentation {
            p.validate()?;
        }
        if self.frontend_pretrain_epochs > 0 {
            if !self.use_frontend {
                return Err(Error::config("frontend_pretrain_epochs needs use_frontend"));
            }
            if self.frontend_init != FrontendInit::Random {
                return Err(Error::config(
                    "frontend_pretrain_epochs only applies to a randomly initialised front-end",
                ));
            }
            if self.augmentation.is_none() {
                return Err(Error::config("front-end pre-training needs an augmentation policy for noisy inputs"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub ce: f64,
    pub mse: f64,
    pub total: f64,
}

impl Losses {
    pub fn select(&self, on: SelectOn) -> f64 {
        match on {
            SelectOn::Ce => self.ce,
            SelectOn::Total => self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: Losses,
    pub dev: Losses,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Resumable training progress. All randomness is derived from `seed` and
/// the epoch/utterance indices, so `(seed, epoch)` is the full rng state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub lr: f64,
    pub best_dev: Option<f64>,
    pub best_epoch: Option<usize>,
    pub scheduler: ReduceOnPlateau,
    pub optimizer_steps: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            seed: cfg.seed,
            lr: cfg.lr,
            best_dev: None,
            best_epoch: None,
            scheduler: cfg.scheduler.clone(),
            optimizer_steps: 0,
            history: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(format!("bad training state: {e}")))
    }
}
