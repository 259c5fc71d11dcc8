//! Dual-input U-Net mask estimator for FBANK enhancement.
//!
//! The network maps a `[N, T, F]` batch of log-mel features to a soft mask of
//! the same shape. During training the noisy and clean copies of a batch are
//! stacked into one `2N` batch whose labels are the clean features twice.

use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::rng_from_seed;
use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, sigmoid, stack_features, tensor_to_array2, Adam, BatchNorm, Conv2d, ConvTranspose2d, ParamStore, Scope,
};
use crate::signal::FbankFeatures;

/// Keeps mask values strictly inside (0, 1) even where sigmoid saturates in f32.
pub const MASK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumenetConfig {
    pub encoder_channels: Vec<usize>,
    pub input_channels: usize,
    pub n_mels: usize,
    pub leaky_slope: f64,
}

impl Default for DumenetConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![16, 32, 64, 128],
            input_channels: 1,
            n_mels: 80,
            leaky_slope: 0.2,
        }
    }
}

impl DumenetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::config("encoder_channels must be non-empty and positive"));
        }
        if self.input_channels != 1 {
            return Err(Error::config("only single-channel FBANK input is supported"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be positive"));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Both axes are padded to a multiple of this before the encoder.
    pub fn alignment(&self) -> usize {
        1 << self.n_blocks()
    }
}

struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm,
}

struct DeconvBnAct {
    deconv: ConvTranspose2d,
    bn: BatchNorm,
}

pub struct Dumenet {
    cfg: DumenetConfig,
    in_conv: ConvBnAct,
    encoder: Vec<ConvBnAct>,
    decoder: Vec<DeconvBnAct>,
    out_conv: ConvTranspose2d,
}

impl Dumenet {
    pub fn new(s: &Scope, cfg: &DumenetConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = &cfg.encoder_channels;
        let n = ch.len();
        let c0 = ch[0];
        let in_conv = ConvBnAct {
            conv: Conv2d::new(&s.pp("in_conv.conv"), cfg.input_channels, c0, 3, 1, 1, false)?,
            bn: BatchNorm::new(&s.pp("in_conv.bn"), c0)?,
        };
        let mut encoder = Vec::with_capacity(n);
        let mut prev = c0;
        for (i, &c) in ch.iter().enumerate() {
            let e = s.pp("encoder").pp(i);
            encoder.push(ConvBnAct {
                conv: Conv2d::new(&e.pp("conv"), prev, c, 3, 2, 1, false)?,
                bn: BatchNorm::new(&e.pp("bn"), c)?,
            });
            prev = c;
        }
        // Decoder j upsamples and concatenates the skip from encoder level n-2-j
        // (the input convolution for the last one).
        let mut decoder = Vec::with_capacity(n);
        let mut in_ch = ch[n - 1];
        for j in 0..n {
            let skip_ch = if j + 1 < n { ch[n - 2 - j] } else { c0 };
            let d = s.pp("decoder").pp(j);
            decoder.push(DeconvBnAct {
                deconv: ConvTranspose2d::new(&d.pp("deconv"), in_ch, skip_ch, 3, 2, 1, 1, false)?,
                bn: BatchNorm::new(&d.pp("bn"), skip_ch)?,
            });
            in_ch = 2 * skip_ch;
        }
        let out_conv = ConvTranspose2d::new(&s.pp("out_conv"), in_ch, 1, 3, 1, 1, 0, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            in_conv,
            encoder,
            decoder,
            out_conv,
        })
    }

    pub fn config(&self) -> &DumenetConfig {
        &self.cfg
    }

    /// Output layer, exposed so tests can pin the pre-activation.
    pub fn out_conv(&self) -> &ConvTranspose2d {
        &self.out_conv
    }

    /// Raw pre-sigmoid output `[N, T, F]`.
    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, t, f) = x.dims3()?;
        let align = self.cfg.alignment();
        if t < align {
            return Err(Error::shape(format!("need at least {align} frames, got {t}")));
        }
        if f != self.cfg.n_mels {
            return Err(Error::shape(format!("expected {} mel bins, got {f}", self.cfg.n_mels)));
        }
        let tp = t.div_ceil(align) * align;
        let fp = f.div_ceil(align) * align;
        let slope = self.cfg.leaky_slope;
        let h = x.pad_with_zeros(1, 0, tp - t)?.pad_with_zeros(2, 0, fp - f)?.unsqueeze(1)?;

        let mut h = leaky_relu(&self.in_conv.bn.forward(&self.in_conv.conv.forward(&h)?, train)?, slope)?;
        let mut skips = vec![h.clone()];
        for blk in &self.encoder {
            h = leaky_relu(&blk.bn.forward(&blk.conv.forward(&h)?, train)?, slope)?;
            skips.push(h.clone());
        }
        skips.pop();
        for blk in &self.decoder {
            h = leaky_relu(&blk.bn.forward(&blk.deconv.forward(&h)?, train)?, slope)?;
            let skip = skips.pop().expect("one skip per decoder block");
            h = Tensor::cat(&[h, skip], 1)?;
        }
        let z = self.out_conv.forward(&h)?.squeeze(1)?;
        Ok(z.narrow(1, 0, t)?.narrow(2, 0, f)?)
    }

    /// Soft mask in (0, 1), same shape as the input batch.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let s = sigmoid(&self.logits(x, train)?)?;
        Ok(((s * (1.0 - 2.0 * MASK_MARGIN))? + MASK_MARGIN)?)
    }

    /// Noisy-branch inference path: `features * forward(features)` in eval mode.
    pub fn enhance_tensor(&self, x: &Tensor) -> Result<Tensor> {
        apply_mask(x, &self.forward(x, false)?)
    }

    pub fn enhance(&self, features: &FbankFeatures, dtype: DType) -> Result<FbankFeatures> {
        let x = stack_features(&[&features.values], dtype)?;
        let y = self.enhance_tensor(&x)?.squeeze(0)?;
        Ok(FbankFeatures {
            values: tensor_to_array2(&y)?,
            params: features.params.clone(),
            log_floor: features.log_floor,
        })
    }
}

/// Per-bin gain matrix `[T × d]` with values in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub values: Array2<f64>,
}

pub fn apply_mask(features: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if features.dims() != mask.dims() {
        return Err(Error::shape(format!(
            "mask shape {:?} does not match features {:?}",
            mask.dims(),
            features.dims()
        )));
    }
    Ok((features * mask)?)
}

pub fn apply_soft_mask(features: &FbankFeatures, mask: &SoftMask) -> Result<FbankFeatures> {
    if features.values.dim() != mask.values.dim() {
        return Err(Error::shape(format!(
            "mask shape {:?} does not match features {:?}",
            mask.values.dim(),
            features.values.dim()
        )));
    }
    Ok(FbankFeatures {
        values: &features.values * &mask.values,
        params: features.params.clone(),
        log_floor: features.log_floor,
    })
}

/// Noisy and clean features stacked for one training step.
#[derive(Debug, Clone)]
pub struct DualBatch {
    /// `[2B, T, F]`: noisy rows first, clean rows second.
    pub inputs: Tensor,
    /// `[2B, T, F]`: clean features twice.
    pub labels: Tensor,
    /// Bona fide = 1, spoof = 0, repeated twice.
    pub targets: Vec<u32>,
}

impl DualBatch {
    pub fn new(noisy: &Tensor, clean: &Tensor, targets: &[u32]) -> Result<Self> {
        if noisy.dims() != clean.dims() {
            return Err(Error::shape(format!(
                "noisy {:?} and clean {:?} batches differ",
                noisy.dims(),
                clean.dims()
            )));
        }
        if noisy.dim(0)? != targets.len() {
            return Err(Error::shape("one authenticity label per utterance required"));
        }
        Ok(Self {
            inputs: Tensor::cat(&[noisy, clean], 0)?,
            labels: Tensor::cat(&[clean, clean], 0)?,
            targets: targets.iter().chain(targets).copied().collect(),
        })
    }

    pub fn half(&self) -> usize {
        self.targets.len() / 2
    }
}

/// Sum of the noisy-branch and clean-branch squared errors, divided by the
/// number of time-frequency cells of one branch and averaged over utterances.
pub fn masked_mse_loss(batch: &DualBatch, masks: &Tensor) -> Result<Tensor> {
    let masked = apply_mask(&batch.inputs, masks)?;
    if masked.dims() != batch.labels.dims() {
        return Err(Error::shape("labels do not match masked features"));
    }
    let (n2, t, f) = masked.dims3()?;
    if n2 % 2 != 0 {
        return Err(Error::shape("dual batch must have an even number of rows"));
    }
    let cells = (n2 / 2 * t * f) as f64;
    Ok(((masked - &batch.labels)?.sqr()?.sum_all()? / cells)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Loss of the very first minibatch, before any update.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the mask estimator alone on paired (noisy, clean) features.
pub fn pretrain_frontend(
    net: &Dumenet,
    store: &ParamStore,
    pairs: &[(Array2<f64>, Array2<f64>)],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<PretrainReport> {
    if pairs.is_empty() {
        return Err(Error::config("front-end pre-training needs at least one (noisy, clean) pair"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut opt = Adam::new(lr);
    let mut report = PretrainReport {
        initial_loss: f64::NAN,
        epoch_losses: Vec::with_capacity(epochs),
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng_from_seed(crate::augment::derive_seed(seed, 0xF0, epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let noisy: Vec<&Array2<f64>> = chunk.iter().map(|&i| &pairs[i].0).collect();
            let clean: Vec<&Array2<f64>> = chunk.iter().map(|&i| &pairs[i].1).collect();
            let batch = DualBatch::new(
                &stack_features(&noisy, store.dtype())?,
                &stack_features(&clean, store.dtype())?,
                &vec![1; chunk.len()],
            )?;
            let masks = net.forward(&batch.inputs, true)?;
            let loss = masked_mse_loss(&batch, &masks)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("front-end loss diverged at epoch {epoch}")));
            }
            if report.initial_loss.is_nan() {
                report.initial_loss = value;
            }
            opt.step(store, &loss.backward()?)?;
            total += value;
            batches += 1;
        }
        report.epoch_losses.push(total / batches as f64);
    }
    Ok(report)
}
