//! A complete countermeasure: feature extraction, optional mask front-end
//! and a backend classifier sharing one parameter store.

use std::path::Path;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendConfigs, BackendKind, ConformerConfig, LcnnConfig, ResNetConfig, WeightManifest};
use crate::data::write_atomic;
use crate::dumenet::{apply_mask, Dumenet, DumenetConfig};
use crate::error::{Error, Result};
use crate::nn::{stack_features, ParamStore};
use crate::signal::{fbank, StftParams, Waveform};

pub const FRONTEND_PREFIX: &str = "frontend";
pub const BACKEND_PREFIX: &str = "backend";
/// Where a Conformer backend keeps its encoder inside the store.
pub const CONFORMER_ENCODER_PREFIX: &str = "backend.encoder";
pub const SYSTEM_FILE: &str = "system.json";
pub const WEIGHTS_DIR: &str = "weights";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub stft: StftParams,
    pub n_mels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            n_mels: 80,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be positive"));
        }
        Ok(())
    }

    /// Log-mel energies shifted so that the log floor maps to zero.
    ///
    /// Additive noise and reverberation only add energy, so on this scale a
    /// gain in (0, 1) can bring corrupted features back towards the clean ones.
    pub fn extract(&self, w: &Waveform) -> Result<Array2<f64>> {
        let f = fbank(w, self.n_mels, &self.stft)?;
        let offset = f.log_floor.ln();
        Ok(f.values.mapv(|v| v - offset))
    }
}

/// Architecture hyperparameters shared by every system in a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub features: FeatureConfig,
    pub dumenet: DumenetConfig,
    pub backends: BackendConfigs,
}

impl ArchConfig {
    /// Miniature sizes for CPU-scale runs on the synthetic fixture.
    pub fn mini(n_mels: usize) -> Self {
        let mut a = Self::default();
        a.features.n_mels = n_mels;
        a.dumenet.n_mels = n_mels;
        a.dumenet.encoder_channels = vec![8, 16, 32];
        a.backends.conformer = ConformerConfig {
            n_blocks: 2,
            model_dim: 32,
            ffn_dim: 64,
            n_heads: 2,
            subsampling_channels: 16,
            conv_kernel: 7,
            embedding_dim: 32,
            attention_dim: 16,
            n_mels,
            ..Default::default()
        };
        a.backends.lcnn = LcnnConfig {
            n_mels,
            lstm_hidden: 16,
            embedding_dim: 32,
            attention_dim: 16,
        };
        a.backends.resnet18 = ResNetConfig {
            channels: vec![4, 8, 16, 32],
            embedding_dim: 32,
            attention_dim: 16,
            n_mels,
            ..Default::default()
        };
        a
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.dumenet.validate()?;
        self.backends.validate()?;
        if self.dumenet.n_mels != self.features.n_mels {
            return Err(Error::config(format!(
                "dumenet.n_mels = {} but features use {} mel bins",
                self.dumenet.n_mels, self.features.n_mels
            )));
        }
        let b = &self.backends;
        for (name, n) in [("conformer", b.conformer.n_mels), ("lcnn", b.lcnn.n_mels), ("resnet18", b.resnet18.n_mels)] {
            if n != self.features.n_mels {
                return Err(Error::config(format!(
                    "backends.{name}.n_mels = {n} but features use {} mel bins",
                    self.features.n_mels
                )));
            }
        }
        Ok(())
    }
}

/// Everything needed to rebuild a trained system from its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub backend: BackendKind,
    pub use_frontend: bool,
    pub arch: ArchConfig,
}

pub struct CmSystem {
    pub spec: SystemSpec,
    pub store: ParamStore,
    pub frontend: Option<Dumenet>,
    pub backend: Backend,
}

impl CmSystem {
    pub fn new(spec: &SystemSpec, init_seed: u64, dtype: DType) -> Result<Self> {
        spec.arch.validate()?;
        let store = ParamStore::new(init_seed, dtype);
        let root = store.root();
        let frontend = if spec.use_frontend {
            Some(Dumenet::new(&root.pp(FRONTEND_PREFIX), &spec.arch.dumenet)?)
        } else {
            None
        };
        let backend = Backend::new(&root.pp(BACKEND_PREFIX), spec.backend, &spec.arch.backends)?;
        Ok(Self {
            spec: spec.clone(),
            store,
            frontend,
            backend,
        })
    }

    /// Shortest utterance (in frames) every component accepts.
    pub fn min_frames(&self) -> usize {
        let fe = self.frontend.as_ref().map_or(1, |f| f.config().alignment());
        fe.max(self.backend.min_frames())
    }

    /// Applies the front-end mask when present. Returns the backend input and
    /// the masks (if any).
    pub fn enhance(&self, x: &Tensor, train: bool) -> Result<(Tensor, Option<Tensor>)> {
        match &self.frontend {
            Some(f) => {
                let m = f.forward(x, train)?;
                Ok((apply_mask(x, &m)?, Some(m)))
            }
            None => Ok((x.clone(), None)),
        }
    }

    /// Eval-mode bona fide scores for a batch of equal-length feature matrices.
    pub fn score_batch(&self, feats: &[&Array2<f64>]) -> Result<Vec<f64>> {
        let x = stack_features(feats, self.store.dtype())?;
        let (y, _) = self.enhance(&x, false)?;
        let s = self.backend.scores(&y, false)?;
        Ok(s.to_dtype(DType::F64)?.to_vec1()?)
    }

    pub fn score_waveform(&self, w: &Waveform) -> Result<f64> {
        let f = self.spec.arch.features.extract(w)?;
        if f.nrows() < self.min_frames() {
            return Err(Error::invalid(format!(
                "utterance has {} frames, the system needs at least {}",
                f.nrows(),
                self.min_frames()
            )));
        }
        Ok(self.score_batch(&[&f])?[0])
    }

    /// Writes `system.json` and every parameter and buffer under `weights/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        WeightManifest::from_store(&self.store, "")?.write(&dir.join(WEIGHTS_DIR))?;
        let json = serde_json::to_string_pretty(&self.spec).expect("spec serialises");
        write_atomic(&dir.join(SYSTEM_FILE), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SYSTEM_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let spec: SystemSpec =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let manifest = WeightManifest::read(&dir.join(WEIGHTS_DIR))?;
        let dtype = manifest
            .arrays
            .first()
            .map(|a| a.to_tensor().map(|t| t.dtype()))
            .transpose()?
            .unwrap_or(DType::F32);
        let sys = Self::new(&spec, 0, dtype)?;
        sys.load_weights(&manifest)?;
        Ok(sys)
    }

    /// Overwrites every store entry from a manifest using internal names.
    /// Nothing is written unless every entry is present with the right shape.
    pub fn load_weights(&self, manifest: &WeightManifest) -> Result<()> {
        let names = self.store.names();
        if manifest.arrays.len() != names.len() {
            return Err(Error::config(format!(
                "checkpoint has {} arrays, model has {}",
                manifest.arrays.len(),
                names.len()
            )));
        }
        let mut values = Vec::with_capacity(names.len());
        for name in &names {
            let a = manifest
                .get(name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks `{name}`")))?;
            let cur = self.store.get(name).expect("name comes from the store");
            if a.shape != cur.dims() {
                return Err(Error::Shape(format!(
                    "checkpoint array `{name}` has shape {:?}, model expects {:?}",
                    a.shape,
                    cur.dims()
                )));
            }
            values.push((name.clone(), a.to_tensor()?.to_dtype(self.store.dtype())?));
        }
        self.store.load_snapshot(&values)
    }
}
