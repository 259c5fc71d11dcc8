use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{EpochRecord, FrontendInit, Losses, TrainConfig, TrainState};
use super::losses::{bce_loss, joint_loss};
use crate::augment::{augment_online, derive_seed, rng_from_seed, NoiseInventory};
use crate::backends::{conformer_name_map, load_pretrained, BackendKind, LoadReport, NameMap, WeightManifest};
use crate::data::{write_atomic, Utterance};
use crate::dumenet::{masked_mse_loss, pretrain_frontend, DualBatch, PretrainReport};
use crate::error::{Error, Result};
use crate::nn::{stack_features, Adam};
use crate::system::{ArchConfig, CmSystem, SystemSpec, CONFORMER_ENCODER_PREFIX, FRONTEND_PREFIX};

pub const LOG_FILE: &str = "train.log";
pub const STATE_FILE: &str = "state.json";
pub const LAST_DIR: &str = "last";
pub const BEST_DIR: &str = "best";
pub const OPTIMIZER_DIR: &str = "optimizer";
pub const DIVERGED_DIR: &str = "diverged";

// Stream tags for derive_seed.
const TAG_INIT: u64 = 0x1417;
const TAG_SHUFFLE: u64 = 0x5401;
const TAG_TRAIN: u64 = 0x7A11;
const TAG_DEV: u64 = 0xDE7;
const TAG_PRETRAIN: u64 = 0xF1E5;

/// Clean and (possibly) corrupted features for one minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub noisy: Tensor,
    pub clean: Tensor,
    pub targets: Vec<u32>,
}

/// Losses of one step: the scalar values and the tensor that was optimised.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub losses: Losses,
    pub total: Tensor,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub system: CmSystem,
    pub opt: Adam,
    pub state: TrainState,
    pub backend_load: Option<LoadReport>,
    pub frontend_pretrain: Option<PretrainReport>,
}

impl Trainer {
    /// Builds the system, imports pretrained weights and applies freezing.
    /// In-run front-end pre-training happens in [`Trainer::prepare`].
    pub fn new(cfg: &TrainConfig, arch: &ArchConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let spec = SystemSpec {
            backend: cfg.backend,
            use_frontend: cfg.use_frontend,
            arch: arch.clone(),
        };
        let system = CmSystem::new(&spec, derive_seed(cfg.seed, TAG_INIT, 0), dtype)?;
        let mut backend_load = None;
        if let Some(p) = &cfg.backend_pretrained {
            let manifest = WeightManifest::read(&p.manifest)?;
            let map = match (&p.name_map, cfg.backend) {
                (Some(path), _) => NameMap::read(path)?,
                (None, BackendKind::Conformer) => conformer_name_map(&system.store, CONFORMER_ENCODER_PREFIX),
                (None, kind) => {
                    return Err(Error::config(format!(
                        "a pretrained {} backend needs an explicit name_map",
                        kind.as_str()
                    )))
                }
            };
            backend_load = Some(load_pretrained(&manifest, &map, &system.store, p.allow_partial)?);
        }
        if let FrontendInit::Pretrained { path } = &cfg.frontend_init {
            if cfg.use_frontend {
                let manifest = WeightManifest::read(path)?;
                let prefix = format!("{FRONTEND_PREFIX}.");
                let map = NameMap {
                    pairs: system
                        .store
                        .names()
                        .into_iter()
                        .filter(|n| n.starts_with(&prefix))
                        .map(|n| (n.clone(), n))
                        .collect(),
                };
                load_pretrained(&manifest, &map, &system.store, false)?;
            }
        }
        if cfg.frontend_frozen {
            system.store.set_frozen(&format!("{FRONTEND_PREFIX}."), true);
        }
        Ok(Self {
            cfg: cfg.clone(),
            system,
            opt: Adam::new(cfg.lr),
            state: TrainState::new(cfg),
            backend_load,
            frontend_pretrain: None,
        })
    }

    fn crop_len(&self, sample_rate: u32) -> usize {
        ((self.cfg.crop_secs * sample_rate as f64).round() as usize).max(1)
    }

    /// Features of `utts`, cropped (random start when `train`, centred
    /// otherwise) and corrupted under the configured policy.
    pub fn make_batch(
        &self,
        utts: &[&Utterance],
        seeds: &[u64],
        inventory: &NoiseInventory,
        train: bool,
    ) -> Result<Batch> {
        let feats = &self.system.spec.arch.features;
        let mut noisy = Vec::with_capacity(utts.len());
        let mut clean = Vec::with_capacity(utts.len());
        for (u, &seed) in utts.iter().zip(seeds) {
            let w = &u.waveform;
            let len = self.crop_len(w.sample_rate());
            let slack = w.len().saturating_sub(len);
            let start = if train {
                rng_from_seed(seed ^ 0xC809).random_range(0..=slack)
            } else {
                slack / 2
            };
            let cropped = w.with_samples(w.looped_segment(start, len))?;
            let corrupted = match &self.cfg.augmentation {
                Some(policy) => augment_online(&u.utt_id, &cropped, policy, inventory, seed)?.0,
                None => cropped.clone(),
            };
            noisy.push(feats.extract(&corrupted)?);
            clean.push(feats.extract(&cropped)?);
        }
        let dtype = self.system.store.dtype();
        Ok(Batch {
            noisy: stack_features(&noisy.iter().collect::<Vec<_>>(), dtype)?,
            clean: stack_features(&clean.iter().collect::<Vec<_>>(), dtype)?,
            targets: utts.iter().map(|u| u.label.target()).collect(),
        })
    }

    /// Forward pass and losses. With a front-end the noisy and clean halves
    /// are scored together; without one only the (corrupted) inputs are.
    pub fn forward(&self, batch: &Batch, train: bool) -> Result<StepOutput> {
        let dtype = self.system.store.dtype();
        let (logits, targets, mse) = match &self.system.frontend {
            Some(fe) => {
                let dual = DualBatch::new(&batch.noisy, &batch.clean, &batch.targets)?;
                let fe_train = train && !self.cfg.frontend_frozen;
                let mut masks = fe.forward(&dual.inputs, fe_train)?;
                if self.cfg.frontend_frozen {
                    masks = masks.detach();
                }
                let enhanced = (&dual.inputs * &masks)?;
                let logits = self.system.backend.logits(&enhanced, train)?;
                let mse = masked_mse_loss(&dual, &masks)?;
                (logits, dual.targets, mse)
            }
            None => {
                let logits = self.system.backend.logits(&batch.noisy, train)?;
                (logits, batch.targets.clone(), Tensor::new(0.0f64, batch.noisy.device())?.to_dtype(dtype)?)
            }
        };
        let ce = bce_loss(&logits, &targets)?;
        let total = joint_loss(&ce, &mse, self.cfg.w_mse)?;
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(StepOutput {
            losses: Losses {
                ce: v(&ce)?,
                mse: v(&mse)?,
                total: v(&total)?,
            },
            total,
        })
    }

    /// One optimisation step on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<Losses> {
        let out = self.forward(batch, true)?;
        if !out.losses.total.is_finite() {
            return Err(Error::Numeric(format!("training loss is {}", out.losses.total)));
        }
        let grads = out.total.backward()?;
        self.opt.step(&self.system.store, &grads)?;
        Ok(out.losses)
    }

    /// Mask-only pre-training on (corrupted, clean) pairs of the training set.
    pub fn prepare(&mut self, train: &[Utterance], inventory: &NoiseInventory) -> Result<()> {
        let epochs = self.cfg.frontend_pretrain_epochs;
        if epochs == 0 || self.state.epoch > 0 {
            return Ok(());
        }
        let Some(fe) = &self.system.frontend else {
            return Ok(());
        };
        let mut pairs: Vec<(Array2<f64>, Array2<f64>)> = Vec::with_capacity(train.len());
        for (i, u) in train.iter().enumerate() {
            let b = self.make_batch(&[u], &[derive_seed(self.cfg.seed, TAG_PRETRAIN, i as u64)], inventory, true)?;
            pairs.push((
                crate::nn::tensor_to_array2(&b.noisy.squeeze(0)?)?,
                crate::nn::tensor_to_array2(&b.clean.squeeze(0)?)?,
            ));
        }
        let report = pretrain_frontend(
            fe,
            &self.system.store,
            &pairs,
            epochs,
            self.cfg.batch_size,
            self.cfg.lr,
            derive_seed(self.cfg.seed, TAG_PRETRAIN, u64::MAX),
        )?;
        self.frontend_pretrain = Some(report);
        Ok(())
    }

    fn run_epoch(&mut self, train: &[Utterance], inventory: &NoiseInventory) -> Result<Losses> {
        let epoch = self.state.epoch as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(self.cfg.seed, TAG_SHUFFLE, epoch)));
        let mut acc = Losses::default();
        for chunk in order.chunks(self.cfg.batch_size) {
            let utts: Vec<&Utterance> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| derive_seed(self.cfg.seed, TAG_TRAIN ^ (epoch << 20), i as u64))
                .collect();
            let batch = self.make_batch(&utts, &seeds, inventory, true)?;
            let l = self.step(&batch)?;
            let w = chunk.len() as f64;
            acc.ce += l.ce * w;
            acc.mse += l.mse * w;
            acc.total += l.total * w;
        }
        let n = train.len() as f64;
        Ok(Losses {
            ce: acc.ce / n,
            mse: acc.mse / n,
            total: acc.total / n,
        })
    }

    /// Eval-mode losses on `dev`, with crops and corruptions that do not
    /// change between epochs.
    pub fn dev_losses(&self, dev: &[Utterance], inventory: &NoiseInventory) -> Result<Losses> {
        let mut acc = Losses::default();
        let idx: Vec<usize> = (0..dev.len()).collect();
        for chunk in idx.chunks(self.cfg.batch_size) {
            let utts: Vec<&Utterance> = chunk.iter().map(|&i| &dev[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| derive_seed(self.cfg.seed, TAG_DEV, i as u64)).collect();
            let batch = self.make_batch(&utts, &seeds, inventory, false)?;
            let l = self.forward(&batch, false)?.losses;
            let w = chunk.len() as f64;
            acc.ce += l.ce * w;
            acc.mse += l.mse * w;
            acc.total += l.total * w;
        }
        let n = dev.len() as f64;
        Ok(Losses {
            ce: acc.ce / n,
            mse: acc.mse / n,
            total: acc.total / n,
        })
    }

    /// Trains until `cfg.epochs` epochs are complete, writing the log, the
    /// `last` and `best` checkpoints and `state.json` under `out`.
    pub fn run(&mut self, train: &[Utterance], dev: &[Utterance], inventory: &NoiseInventory, out: &Path) -> Result<()> {
        if train.is_empty() || dev.is_empty() {
            return Err(Error::config("training and development sets must be non-empty"));
        }
        if self.cfg.augmentation.is_some() && inventory.is_empty() {
            return Err(Error::config("augmentation is enabled but the noise inventory is empty"));
        }
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        self.prepare(train, inventory)?;
        while self.state.epoch < self.cfg.epochs {
            let lr = self.state.lr;
            self.opt.lr = lr;
            let tr = match self.run_epoch(train, inventory) {
                Ok(l) => l,
                Err(Error::Numeric(msg)) => return Err(self.dump_divergence(out, &msg)),
                Err(e) => return Err(e),
            };
            let dv = self.dev_losses(dev, inventory)?;
            if !dv.total.is_finite() {
                return Err(self.dump_divergence(out, &format!("dev loss is {}", dv.total)));
            }
            let epoch = self.state.epoch;
            self.state.history.push(EpochRecord {
                epoch,
                train: tr,
                dev: dv,
                lr,
            });
            append_log(out, epoch, &tr, &dv, lr)?;
            self.state.lr = self.state.scheduler.step(dv.total, lr);
            self.state.epoch += 1;
            self.state.optimizer_steps = self.opt.steps();
            let metric = dv.select(self.cfg.select_on);
            let improved = self.state.best_dev.is_none_or(|b| metric < b);
            if improved {
                self.state.best_dev = Some(metric);
                self.state.best_epoch = Some(epoch);
            }
            self.save_checkpoint(out, LAST_DIR, true)?;
            if improved {
                self.save_checkpoint(out, BEST_DIR, false)?;
            }
        }
        Ok(())
    }

    fn save_checkpoint(&self, out: &Path, name: &str, with_optimizer: bool) -> Result<()> {
        let tmp = out.join(format!("{name}.tmp"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        self.system.save(&tmp)?;
        if with_optimizer {
            let mut m = WeightManifest::default();
            for (n, t) in self.opt.state_tensors() {
                m.push_tensor(&n, &t)?;
            }
            m.write(&tmp.join(OPTIMIZER_DIR))?;
        }
        write_atomic(&tmp.join(STATE_FILE), self.state.to_json().as_bytes())?;
        let dst = out.join(name);
        if dst.exists() {
            std::fs::remove_dir_all(&dst).map_err(|e| Error::io(&dst, e))?;
        }
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
        write_atomic(&out.join(STATE_FILE), self.state.to_json().as_bytes())
    }

    /// Restores weights, optimiser moments and progress from `out/last`.
    pub fn resume(&mut self, out: &Path) -> Result<()> {
        let dir = out.join(LAST_DIR);
        let path = dir.join(STATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state = TrainState::from_json(&text)?;
        if state.seed != self.cfg.seed {
            return Err(Error::config(format!(
                "checkpoint was trained with seed {}, config says {}",
                state.seed, self.cfg.seed
            )));
        }
        let weights = WeightManifest::read(&dir.join(crate::system::WEIGHTS_DIR))?;
        self.system.load_weights(&weights)?;
        let opt = WeightManifest::read(&dir.join(OPTIMIZER_DIR))?;
        let tensors = opt
            .arrays
            .iter()
            .map(|a| Ok((a.name.clone(), a.to_tensor()?)))
            .collect::<Result<Vec<_>>>()?;
        self.opt.load_state(state.optimizer_steps, tensors)?;
        self.opt.lr = state.lr;
        self.state = state;
        Ok(())
    }

    /// Loads the best-dev weights written by [`Trainer::run`].
    pub fn load_best(&self, out: &Path) -> Result<()> {
        let weights = WeightManifest::read(&out.join(BEST_DIR).join(crate::system::WEIGHTS_DIR))?;
        self.system.load_weights(&weights)
    }

    fn dump_divergence(&self, out: &Path, msg: &str) -> Error {
        let dir = out.join(DIVERGED_DIR);
        let mut note = self.state.to_json();
        let _ = writeln!(note);
        let res = (|| -> Result<()> {
            self.system.save(&dir)?;
            write_atomic(&dir.join(STATE_FILE), note.as_bytes())?;
            write_atomic(&dir.join("reason.txt"), format!("epoch {}: {msg}\n", self.state.epoch).as_bytes())
        })();
        match res {
            Ok(()) => Error::Numeric(format!(
                "training diverged at epoch {} ({msg}); state dumped to {}",
                self.state.epoch,
                dir.display()
            )),
            Err(e) => Error::Numeric(format!("training diverged ({msg}); state dump failed: {e}")),
        }
    }
}

fn append_log(out: &Path, epoch: usize, tr: &Losses, dv: &Losses, lr: f64) -> Result<()> {
    let path: PathBuf = out.join(LOG_FILE);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut text = String::new();
    for (split, l) in [("train", tr), ("dev", dv)] {
        writeln!(text, "{epoch}\t{split}\t{:.6}\t{:.6}\t{:.6}\t{lr:e}", l.ce, l.mse, l.total).unwrap();
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Builds a trainer, optionally resumes from `out/last`, trains, and leaves
/// the best-dev weights loaded.
pub fn train(
    cfg: &TrainConfig,
    arch: &ArchConfig,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    inventory: &NoiseInventory,
    out: &Path,
    resume: bool,
) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, arch, DType::F32)?;
    if resume && out.join(LAST_DIR).join(STATE_FILE).exists() {
        t.resume(out)?;
    }
    t.run(train_set, dev_set, inventory, out)?;
    t.load_best(out)?;
    Ok(t)
}

/// Mask-only pre-training of a front-end, written to `out` as a weight
/// manifest of `frontend.*` parameters (usable as `frontend_init`).
pub fn train_frontend(
    cfg: &TrainConfig,
    arch: &ArchConfig,
    train_set: &[Utterance],
    inventory: &NoiseInventory,
    out: &Path,
) -> Result<PretrainReport> {
    if !cfg.use_frontend || cfg.frontend_pretrain_epochs == 0 {
        return Err(Error::config("train-frontend needs use_frontend and frontend_pretrain_epochs > 0"));
    }
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut t = Trainer::new(cfg, arch, DType::F32)?;
    t.prepare(train_set, inventory)?;
    WeightManifest::from_store(&t.system.store, &format!("{FRONTEND_PREFIX}."))?.write(out)?;
    Ok(t.frontend_pretrain.expect("prepare ran"))
}
