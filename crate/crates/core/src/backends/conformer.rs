use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::asp::Asp;
use super::head::Head;
use crate::error::{Error, Result};
use crate::nn::{glu, BatchNorm, Conv2d, DepthwiseConv1d, LayerNorm, Linear, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformerConfig {
    pub n_blocks: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub subsampling_factor: usize,
    /// Channels of the two strided subsampling convolutions.
    pub subsampling_channels: usize,
    pub conv_kernel: usize,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub n_mels: usize,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        Self {
            n_blocks: 16,
            model_dim: 176,
            ffn_dim: 704,
            n_heads: 4,
            subsampling_factor: 4,
            subsampling_channels: 176,
            conv_kernel: 15,
            embedding_dim: 256,
            attention_dim: 128,
            n_mels: 80,
        }
    }
}

impl ConformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.model_dim == 0 || self.ffn_dim == 0 || self.n_heads == 0 {
            return Err(Error::config("conformer sizes must be positive"));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "model_dim {} is not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.subsampling_factor != 4 {
            return Err(Error::config("only a subsampling factor of 4 is supported"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::config("conv_kernel must be odd"));
        }
        if self.subsampling_channels == 0 || self.embedding_dim == 0 || self.attention_dim == 0 || self.n_mels == 0 {
            return Err(Error::config("conformer sizes must be positive"));
        }
        Ok(())
    }

    /// Feature dimension after multi-block aggregation.
    pub fn mfa_dim(&self) -> usize {
        self.model_dim * self.n_blocks
    }

    pub fn subsampled_len(&self, t: usize) -> usize {
        t.div_ceil(2).div_ceil(2)
    }
}

/// Two 3×3 stride-2 convolutions with ReLU, then a linear map to the model dim.
#[derive(Debug, Clone)]
pub struct Subsampling {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
    pub proj: Linear,
}

impl Subsampling {
    pub fn new(s: &Scope, n_mels: usize, channels: usize, model_dim: usize) -> Result<Self> {
        let f = n_mels.div_ceil(2).div_ceil(2);
        Ok(Self {
            conv0: Conv2d::new(&s.pp("conv0"), 1, channels, 3, 2, 1, true)?,
            conv1: Conv2d::new(&s.pp("conv1"), channels, channels, 3, 2, 1, true)?,
            proj: Linear::new(&s.pp("proj"), channels * f, model_dim, true)?,
        })
    }

    /// `[N, T, F]` → `[N, ceil(T/4), d]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv0.forward(&x.unsqueeze(1)?)?.relu()?;
        let h = self.conv1.forward(&h)?.relu()?;
        let (n, c, t, f) = h.dims4()?;
        let h = h.permute((0, 2, 1, 3))?.contiguous()?.reshape((n, t, c * f))?;
        self.proj.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    fn new(s: &Scope, d: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&s.pp("norm"), d)?,
            fc1: Linear::new(&s.pp("fc1"), d, ffn, true)?,
            fc2: Linear::new(&s.pp("fc2"), ffn, d, true)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(&self.norm.forward(x)?)?.silu()?)
    }
}

/// Sinusoidal encodings for relative distances `T-1, T-2, …, -(T-1)`: `[2T-1, d]`.
pub fn relative_positions(t: usize, d: usize, like: &Tensor) -> Result<Tensor> {
    let p = 2 * t - 1;
    let mut data = vec![0f64; p * d];
    for (row, chunk) in data.chunks_mut(d).enumerate() {
        let pos = t as f64 - 1.0 - row as f64;
        for i in (0..d).step_by(2) {
            let freq = (-(i as f64) * (10000f64).ln() / d as f64).exp();
            chunk[i] = (pos * freq).sin();
            if i + 1 < d {
                chunk[i + 1] = (pos * freq).cos();
            }
        }
    }
    Ok(Tensor::from_vec(data, (p, d), like.device())?.to_dtype(like.dtype())?)
}

/// Aligns `[N, H, T, 2T-1]` relative scores to `[N, H, T, T]` so that entry
/// (i, j) holds the score for distance i − j.
pub fn rel_shift(x: &Tensor) -> Result<Tensor> {
    let (n, h, t, p) = x.dims4()?;
    let x = x.pad_with_zeros(3, 1, 0)?.reshape((n, h, p + 1, t))?;
    let x = x.narrow(2, 1, p)?.contiguous()?.reshape((n, h, t, p))?;
    Ok(x.narrow(3, 0, t)?)
}

/// Multi-head self-attention with relative positional encoding and the two
/// learned content/position biases.
#[derive(Debug, Clone)]
pub struct RelPosMhsa {
    pub norm: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub pos: Linear,
    pub pos_bias_u: Tensor,
    pub pos_bias_v: Tensor,
    heads: usize,
}

impl RelPosMhsa {
    fn new(s: &Scope, d: usize, heads: usize) -> Result<Self> {
        let dk = d / heads;
        Ok(Self {
            norm: LayerNorm::new(&s.pp("norm"), d)?,
            q: Linear::new(&s.pp("q"), d, d, true)?,
            k: Linear::new(&s.pp("k"), d, d, true)?,
            v: Linear::new(&s.pp("v"), d, d, true)?,
            out: Linear::new(&s.pp("out"), d, d, true)?,
            pos: Linear::new(&s.pp("pos"), d, d, false)?,
            pos_bias_u: s.constant("pos_bias_u", &[heads, dk], 0.0)?,
            pos_bias_v: s.constant("pos_bias_v", &[heads, dk], 0.0)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (n, t, d) = x.dims3()?;
        Ok(x.reshape((n, t, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.norm.forward(x)?;
        let (n, t, d) = x.dims3()?;
        let dk = d / self.heads;
        let q = self.split_heads(&self.q.forward(&x)?)?;
        let k = self.split_heads(&self.k.forward(&x)?)?;
        let v = self.split_heads(&self.v.forward(&x)?)?;
        let pe = relative_positions(t, d, &x)?;
        let p = self.split_heads(&self.pos.forward(&pe.unsqueeze(0)?)?)?;
        let u = self.pos_bias_u.reshape((1, self.heads, 1, dk))?;
        let w = self.pos_bias_v.reshape((1, self.heads, 1, dk))?;
        let kt = k.transpose(2, 3)?.contiguous()?;
        let pt = p.transpose(2, 3)?.contiguous()?;
        let ac = q.broadcast_add(&u)?.matmul(&kt)?;
        let bd = rel_shift(&q.broadcast_add(&w)?.broadcast_matmul(&pt)?)?;
        let scores = ((ac + bd)? / (dk as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((n, t, d))?;
        self.out.forward(&ctx)
    }
}

/// Pointwise convolution with a `[out, in, 1]` kernel applied to the last dim.
#[derive(Debug, Clone)]
pub struct Pointwise {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Pointwise {
    fn new(s: &Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        let bound = 1.0 / (in_ch as f64).sqrt();
        Ok(Self {
            weight: s.uniform("weight", &[out_ch, in_ch, 1], bound)?,
            bias: s.uniform("bias", &[out_ch], bound)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let lin = Linear {
            weight: self.weight.squeeze(2)?,
            bias: Some(self.bias.clone()),
        };
        lin.forward(x)
    }
}

#[derive(Debug, Clone)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pw1: Pointwise,
    pub dw: DepthwiseConv1d,
    pub bn: BatchNorm,
    pub pw2: Pointwise,
}

impl ConvModule {
    fn new(s: &Scope, d: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&s.pp("norm"), d)?,
            pw1: Pointwise::new(&s.pp("pw1"), d, 2 * d)?,
            dw: DepthwiseConv1d::new(&s.pp("dw"), d, kernel, true)?,
            bn: BatchNorm::new(&s.pp("bn"), d)?,
            pw2: Pointwise::new(&s.pp("pw2"), d, d)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = glu(&self.pw1.forward(&self.norm.forward(x)?)?, 2)?;
        let h = self.dw.forward(&h.transpose(1, 2)?.contiguous()?)?;
        let h = self.bn.forward(&h, train)?.silu()?;
        self.pw2.forward(&h.transpose(1, 2)?.contiguous()?)
    }
}

/// Half-FFN, self-attention, convolution, half-FFN, each residual, then LayerNorm.
#[derive(Debug, Clone)]
pub struct ConformerBlock {
    pub ffn1: FeedForward,
    pub mhsa: RelPosMhsa,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub norm_out: LayerNorm,
}

impl ConformerBlock {
    pub fn new(s: &Scope, cfg: &ConformerConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(Self {
            ffn1: FeedForward::new(&s.pp("ffn1"), d, cfg.ffn_dim)?,
            mhsa: RelPosMhsa::new(&s.pp("mhsa"), d, cfg.n_heads)?,
            conv: ConvModule::new(&s.pp("conv"), d, cfg.conv_kernel)?,
            ffn2: FeedForward::new(&s.pp("ffn2"), d, cfg.ffn_dim)?,
            norm_out: LayerNorm::new(&s.pp("norm_out"), d)?,
        })
    }

    /// `[N, T, d]` → `[N, T, d]`
    pub fn forward(&self, g: &Tensor, train: bool) -> Result<Tensor> {
        let d = self.norm_out.weight.dim(0)?;
        if g.rank() != 3 || g.dim(2)? != d {
            return Err(Error::shape(format!("conformer block expects [N, T, {d}], got {:?}", g.dims())));
        }
        let g1 = (g + (self.ffn1.forward(g)? * 0.5)?)?;
        let g2 = (&g1 + self.mhsa.forward(&g1)?)?;
        let g3 = (&g2 + self.conv.forward(&g2, train)?)?;
        let g4 = (&g3 + (self.ffn2.forward(&g3)? * 0.5)?)?;
        self.norm_out.forward(&g4)
    }
}

#[derive(Debug, Clone)]
pub struct ConformerEncoder {
    pub subsampling: Subsampling,
    pub blocks: Vec<ConformerBlock>,
    cfg: ConformerConfig,
}

impl ConformerEncoder {
    pub fn new(s: &Scope, cfg: &ConformerConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.n_blocks)
            .map(|i| ConformerBlock::new(&s.pp("blocks").pp(i), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            subsampling: Subsampling::new(&s.pp("subsampling"), cfg.n_mels, cfg.subsampling_channels, cfg.model_dim)?,
            blocks,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ConformerConfig {
        &self.cfg
    }

    /// Outputs of every block, in block order.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let (_, _, f) = x.dims3()?;
        if f != self.cfg.n_mels {
            return Err(Error::shape(format!("expected {} mel bins, got {f}", self.cfg.n_mels)));
        }
        let mut h = self.subsampling.forward(x)?;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            h = b.forward(&h, train)?;
            outs.push(h.clone());
        }
        Ok(outs)
    }
}

/// Concatenates block outputs along the feature axis: `L × [N, T, d]` → `[N, T, L·d]`.
pub fn mfa_concat(hs: &[Tensor]) -> Result<Tensor> {
    let first = hs.first().ok_or_else(|| Error::shape("no block outputs to aggregate"))?;
    for h in hs {
        if h.dims() != first.dims() {
            return Err(Error::shape(format!(
                "block outputs disagree: {:?} vs {:?}",
                first.dims(),
                h.dims()
            )));
        }
    }
    Ok(Tensor::cat(hs, 2)?)
}

/// Conformer encoder with multi-block aggregation, pooling and a 2-way head.
#[derive(Debug, Clone)]
pub struct MfaConformer {
    pub encoder: ConformerEncoder,
    pub mfa_norm: LayerNorm,
    pub pool: Asp,
    pub head: Head,
}

impl MfaConformer {
    pub fn new(s: &Scope, cfg: &ConformerConfig) -> Result<Self> {
        let dim = cfg.mfa_dim();
        Ok(Self {
            encoder: ConformerEncoder::new(&s.pp("encoder"), cfg)?,
            mfa_norm: LayerNorm::new(&s.pp("mfa_norm"), dim)?,
            pool: Asp::new(&s.pp("pool"), dim, cfg.attention_dim)?,
            head: Head::new(&s.pp("head"), 2 * dim, cfg.embedding_dim)?,
        })
    }

    /// Normalised aggregate `[N, T', L·d]`.
    pub fn aggregate(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.mfa_norm.forward(&mfa_concat(&self.encoder.forward(x, train)?)?)
    }

    pub fn embed(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.head.embed(&self.pool.forward(&self.aggregate(x, train)?)?)
    }

    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.head.forward(&self.pool.forward(&self.aggregate(x, train)?)?)
    }
}
