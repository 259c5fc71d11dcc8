use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::asp::Asp;
use super::head::Head;
use crate::error::{Error, Result};
use crate::nn::{max_pool2, BatchNorm, BiLstm, Conv2d, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcnnConfig {
    pub n_mels: usize,
    pub lstm_hidden: usize,
    pub embedding_dim: usize,
    pub attention_dim: usize,
}

impl Default for LcnnConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            lstm_hidden: 80,
            embedding_dim: 128,
            attention_dim: 128,
        }
    }
}

impl LcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels < 16 {
            return Err(Error::config("LCNN needs at least 16 mel bins"));
        }
        if self.lstm_hidden == 0 || self.embedding_dim == 0 || self.attention_dim == 0 {
            return Err(Error::config("LCNN sizes must be positive"));
        }
        Ok(())
    }
}

/// Max-feature-map: element-wise maximum of the two channel halves of `[N, 2C, …]`.
pub fn mfm(x: &Tensor) -> Result<Tensor> {
    let c2 = x.dim(1)?;
    if c2 % 2 != 0 {
        return Err(Error::shape(format!("max-feature-map needs an even channel count, got {c2}")));
    }
    let c = c2 / 2;
    Ok(x.narrow(1, 0, c)?.maximum(&x.narrow(1, c, c)?)?)
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv2d),
    Mfm,
    Pool,
    Bn(BatchNorm),
}

/// (table row, output channels before MFM, kernel) for every convolution.
const CONVS: [(usize, usize, usize); 9] = [
    (1, 64, 5),
    (4, 64, 1),
    (7, 96, 3),
    (11, 96, 1),
    (14, 128, 3),
    (17, 128, 1),
    (20, 64, 3),
    (23, 64, 1),
    (26, 64, 3),
];
const POOLS: [usize; 4] = [3, 9, 16, 28];
const NORMS: [usize; 6] = [6, 10, 13, 19, 22, 25];

/// Light CNN stem with MFM activations, a BiLSTM over time, pooling and head.
#[derive(Debug, Clone)]
pub struct Lcnn {
    layers: Vec<(usize, Layer)>,
    pub lstm: BiLstm,
    pub pool: Asp,
    pub head: Head,
    cfg: LcnnConfig,
}

impl Lcnn {
    pub fn new(s: &Scope, cfg: &LcnnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut ch = 1;
        for row in 1..=28 {
            if let Some(&(_, out, k)) = CONVS.iter().find(|c| c.0 == row) {
                layers.push((row, Layer::Conv(Conv2d::new(&s.pp(format!("conv{row}")), ch, out, k, 1, k / 2, true)?)));
                ch = out;
            } else if POOLS.contains(&row) {
                layers.push((row, Layer::Pool));
            } else if NORMS.contains(&row) {
                layers.push((row, Layer::Bn(BatchNorm::new(&s.pp(format!("bn{row}")), ch)?)));
            } else {
                layers.push((row, Layer::Mfm));
                ch /= 2;
            }
        }
        let lstm_in = ch * (cfg.n_mels / 16);
        let lstm = BiLstm::new(&s.pp("lstm"), lstm_in, cfg.lstm_hidden)?;
        let pooled = 2 * cfg.lstm_hidden;
        Ok(Self {
            layers,
            lstm,
            pool: Asp::new(&s.pp("pool"), pooled, cfg.attention_dim)?,
            head: Head::new(&s.pp("head"), 2 * pooled, cfg.embedding_dim)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &LcnnConfig {
        &self.cfg
    }

    /// Runs the convolutional stem on `[N, C, D, L]` and returns every
    /// intermediate map, keyed by table row.
    pub fn stem_trace(&self, x: &Tensor, train: bool) -> Result<Vec<(usize, Tensor)>> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (row, layer) in &self.layers {
            h = match layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::Mfm => mfm(&h)?,
                Layer::Pool => max_pool2(&h)?,
                Layer::Bn(b) => b.forward(&h, train)?,
            };
            out.push((*row, h.clone()));
        }
        Ok(out)
    }

    /// `[N, T, F]` features → `[N, 32, F/16, T/16]` map after the last pooling.
    pub fn stem(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, t, f) = x.dims3()?;
        if t < 16 {
            return Err(Error::shape(format!("LCNN needs at least 16 frames, got {t}")));
        }
        if f != self.cfg.n_mels {
            return Err(Error::shape(format!("expected {} mel bins, got {f}", self.cfg.n_mels)));
        }
        let img = x.transpose(1, 2)?.contiguous()?.unsqueeze(1)?;
        let trace = self.stem_trace(&img, train)?;
        Ok(trace.into_iter().last().expect("stem has layers").1)
    }

    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let m = self.stem(x, train)?;
        let (n, c, d, l) = m.dims4()?;
        let seq = m.permute((0, 3, 1, 2))?.contiguous()?.reshape((n, l, c * d))?;
        let h = self.lstm.forward(&seq)?;
        self.head.forward(&self.pool.forward(&h)?)
    }
}
