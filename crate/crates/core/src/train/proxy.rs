//! Pre-training a Conformer encoder on a stand-in task (low vs. high voice
//! pitch on synthetic speakers) and exporting it under the external encoder
//! naming, so that it can be imported like a third-party checkpoint.

use std::path::Path;

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::bce_loss;
use crate::augment::{derive_seed, rng_from_seed};
use crate::backends::{conformer_name_map, export_mapped, BackendKind, NameMap};
use crate::error::{Error, Result};
use crate::fixture::{synth_utterance, SpeakerProfile};
use crate::nn::{stack_features, Adam};
use crate::signal::Waveform;
use crate::system::{ArchConfig, CmSystem, SystemSpec, CONFORMER_ENCODER_PREFIX};

pub const NAME_MAP_FILE: &str = "name_map.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    pub n_utterances: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            n_utterances: 160,
            duration_s: 1.0,
            sample_rate: 16_000,
            epochs: 4,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyReport {
    pub epoch_losses: Vec<f64>,
    /// Training-set accuracy after the last epoch.
    pub accuracy: f64,
    pub exported: usize,
}

// Speakers are drawn from two pitch ranges with a gap between them.
const LOW_F0: (f64, f64) = (90.0, 135.0);
const HIGH_F0: (f64, f64) = (175.0, 250.0);

/// Trains a Conformer classifier on the pitch task and writes its encoder to
/// `out` as a weight manifest with external names, plus the name map.
pub fn pretrain_encoder(cfg: &ProxyConfig, arch: &ArchConfig, out: &Path) -> Result<ProxyReport> {
    if cfg.n_utterances < 2 || cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.duration_s > 0.0) {
        return Err(Error::config("proxy pre-training needs >= 2 utterances, a batch size, lr and duration"));
    }
    let spec = SystemSpec {
        backend: BackendKind::Conformer,
        use_frontend: false,
        arch: arch.clone(),
    };
    let system = CmSystem::new(&spec, derive_seed(cfg.seed, 0x9A0, 0), DType::F32)?;
    let n = (cfg.duration_s * cfg.sample_rate as f64).round() as usize;
    let mut feats = Vec::with_capacity(cfg.n_utterances);
    let mut targets = Vec::with_capacity(cfg.n_utterances);
    for i in 0..cfg.n_utterances {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x9A1, i as u64));
        let high = i % 2 == 1;
        let mut p = SpeakerProfile::random(&mut rng);
        let (lo, hi) = if high { HIGH_F0 } else { LOW_F0 };
        p.f0_hz = rng.random_range(lo..hi);
        let x = synth_utterance(&p, n, cfg.sample_rate, None, &mut rng);
        feats.push(arch.features.extract(&Waveform::new(x, cfg.sample_rate)?)?);
        targets.push(high as u32);
    }

    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, 0x9A2, epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = stack_features(&chunk.iter().map(|&i| &feats[i]).collect::<Vec<_>>(), DType::F32)?;
            let y: Vec<u32> = chunk.iter().map(|&i| targets[i]).collect();
            let loss = bce_loss(&system.backend.logits(&x, true)?, &y)?;
            let v = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("proxy loss is {v} at epoch {epoch}")));
            }
            opt.step(&system.store, &loss.backward()?)?;
            total += v * chunk.len() as f64;
        }
        epoch_losses.push(total / feats.len() as f64);
    }

    let mut correct = 0;
    for chunk in (0..feats.len()).collect::<Vec<_>>().chunks(cfg.batch_size) {
        let s = system.score_batch(&chunk.iter().map(|&i| &feats[i]).collect::<Vec<_>>())?;
        correct += chunk.iter().zip(&s).filter(|(&i, &p)| (p > 0.5) == (targets[i] == 1)).count();
    }

    let map = conformer_name_map(&system.store, CONFORMER_ENCODER_PREFIX);
    let manifest = export_mapped(&system.store, &map)?;
    manifest.write(out)?;
    map.write(&out.join(NAME_MAP_FILE))?;
    Ok(ProxyReport {
        epoch_losses,
        accuracy: correct as f64 / feats.len() as f64,
        exported: manifest.arrays.len(),
    })
}

/// The name map written next to an exported encoder.
pub fn read_exported_map(dir: &Path) -> Result<NameMap> {
    NameMap::read(&dir.join(NAME_MAP_FILE))
}
