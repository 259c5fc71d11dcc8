use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::asp::Asp;
use super::head::Head;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, BatchNorm, Conv2d, Linear, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResNetConfig {
    pub channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub se: bool,
    pub se_ratio: usize,
    /// Overrides `channels / se_ratio` for every SE bottleneck when set.
    pub se_bottleneck: Option<usize>,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub n_mels: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
            se: true,
            se_ratio: 4,
            se_bottleneck: None,
            embedding_dim: 128,
            attention_dim: 128,
            n_mels: 80,
        }
    }
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.blocks_per_stage == 0 {
            return Err(Error::config("resnet channels and blocks_per_stage must be positive"));
        }
        if self.se_ratio == 0 || self.se_bottleneck == Some(0) {
            return Err(Error::config("SE bottleneck must be positive"));
        }
        if self.embedding_dim == 0 || self.attention_dim == 0 || self.n_mels == 0 {
            return Err(Error::config("resnet sizes must be positive"));
        }
        Ok(())
    }

    fn bottleneck(&self, c: usize) -> usize {
        self.se_bottleneck.unwrap_or((c / self.se_ratio).max(1))
    }

    /// Feature-axis size after all strided stages.
    pub fn reduced_mels(&self) -> usize {
        (1..self.channels.len()).fold(self.n_mels, |f, _| f.div_ceil(2))
    }
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SqueezeExcite {
    fn new(s: &Scope, channels: usize, bottleneck: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&s.pp("fc1"), channels, bottleneck, true)?,
            fc2: Linear::new(&s.pp("fc2"), bottleneck, channels, true)?,
        })
    }

    /// Per-channel gates `[N, C, 1, 1]`.
    pub fn gates(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let z = x.mean(3)?.mean(2)?;
        let g = sigmoid(&self.fc2.forward(&self.fc1.forward(&z)?.relu()?)?)?;
        Ok(g.reshape((n, c, 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct Shortcut {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

/// Two 3×3 convolutions with batch norm, optional SE gate and a residual path.
#[derive(Debug, Clone)]
pub struct ResidualUnit {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub se: Option<SqueezeExcite>,
    pub shortcut: Option<Shortcut>,
}

impl ResidualUnit {
    pub fn new(s: &Scope, in_ch: usize, out_ch: usize, stride: usize, se_bottleneck: Option<usize>) -> Result<Self> {
        let shortcut = if stride != 1 || in_ch != out_ch {
            Some(Shortcut {
                conv: Conv2d::new(&s.pp("shortcut.conv"), in_ch, out_ch, 1, stride, 0, false)?,
                bn: BatchNorm::new(&s.pp("shortcut.bn"), out_ch)?,
            })
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&s.pp("conv1"), in_ch, out_ch, 3, stride, 1, false)?,
            bn1: BatchNorm::new(&s.pp("bn1"), out_ch)?,
            conv2: Conv2d::new(&s.pp("conv2"), out_ch, out_ch, 3, 1, 1, false)?,
            bn2: BatchNorm::new(&s.pp("bn2"), out_ch)?,
            se: se_bottleneck
                .map(|b| SqueezeExcite::new(&s.pp("se"), out_ch, b))
                .transpose()?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let mut h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        if let Some(se) = &self.se {
            h = h.broadcast_mul(&se.gates(&h)?)?;
        }
        let sc = match &self.shortcut {
            Some(s) => s.bn.forward(&s.conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + sc)?.relu()?)
    }
}

/// ResNet18-style classifier over `[N, 1, D, L]` feature maps.
#[derive(Debug, Clone)]
pub struct ResNet18 {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub stages: Vec<Vec<ResidualUnit>>,
    pub pool: Asp,
    pub head: Head,
    cfg: ResNetConfig,
}

impl ResNet18 {
    pub fn new(s: &Scope, cfg: &ResNetConfig) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.channels[0];
        let mut stages = Vec::with_capacity(cfg.channels.len());
        let mut prev = c0;
        for (i, &c) in cfg.channels.iter().enumerate() {
            let st = s.pp("stages").pp(i);
            let se = cfg.se.then(|| cfg.bottleneck(c));
            let mut units = Vec::with_capacity(cfg.blocks_per_stage);
            for j in 0..cfg.blocks_per_stage {
                let stride = if i > 0 && j == 0 { 2 } else { 1 };
                units.push(ResidualUnit::new(&st.pp(j), if j == 0 { prev } else { c }, c, stride, se)?);
            }
            stages.push(units);
            prev = c;
        }
        let pooled = prev * cfg.reduced_mels();
        Ok(Self {
            conv1: Conv2d::new(&s.pp("conv1"), 1, c0, 3, 1, 1, false)?,
            bn1: BatchNorm::new(&s.pp("bn1"), c0)?,
            stages,
            pool: Asp::new(&s.pp("pool"), pooled, cfg.attention_dim)?,
            head: Head::new(&s.pp("head"), 2 * pooled, cfg.embedding_dim)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.cfg
    }

    /// `[N, T, F]` features → the stem output followed by each stage output,
    /// all laid out `[N, C, D, L]`.
    pub fn forward_stages(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let (_, t, f) = x.dims3()?;
        let min_t = 1 << (self.cfg.channels.len() - 1);
        if t < min_t {
            return Err(Error::shape(format!("ResNet needs at least {min_t} frames, got {t}")));
        }
        if f != self.cfg.n_mels {
            return Err(Error::shape(format!("expected {} mel bins, got {f}", self.cfg.n_mels)));
        }
        let img = x.transpose(1, 2)?.contiguous()?.unsqueeze(1)?;
        let mut h = self.bn1.forward(&self.conv1.forward(&img)?, train)?.relu()?;
        let mut outs = vec![h.clone()];
        for stage in &self.stages {
            for unit in stage {
                h = unit.forward(&h, train)?;
            }
            outs.push(h.clone());
        }
        Ok(outs)
    }

    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let m = self.forward_stages(x, train)?.pop().expect("at least one stage");
        let (n, c, d, l) = m.dims4()?;
        let seq = m.permute((0, 3, 1, 2))?.contiguous()?.reshape((n, l, c * d))?;
        self.head.forward(&self.pool.forward(&seq)?)
    }
}
