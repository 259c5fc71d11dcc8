use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{Linear, Scope};

/// Attentive statistics pooling over the time axis of `[N, T, D]` input.
///
/// Scores `e_t = vᵀ tanh(W h_t + b) + k` are softmax-normalised over time and
/// used to weight the first two moments of `h_t`.
#[derive(Debug, Clone)]
pub struct Asp {
    pub attention: Linear,
    pub score: Linear,
    dim: usize,
}

impl Asp {
    pub fn new(s: &Scope, dim: usize, attention_dim: usize) -> Result<Self> {
        Ok(Self {
            attention: Linear::new(&s.pp("attention"), dim, attention_dim, true)?,
            score: Linear::new(&s.pp("score"), attention_dim, 1, true)?,
            dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dim
    }

    /// Attention weights `[N, T]`.
    pub fn weights(&self, h: &Tensor) -> Result<Tensor> {
        let (_, t, d) = h.dims3()?;
        if t == 0 {
            return Err(Error::invalid("attentive pooling needs at least one frame"));
        }
        if d != self.dim {
            return Err(Error::shape(format!("pooling expects feature dim {}, got {d}", self.dim)));
        }
        let e = self.score.forward(&self.attention.forward(h)?.tanh()?)?.squeeze(2)?;
        Ok(candle_nn::ops::softmax(&e, D::Minus1)?)
    }

    /// `[N, T, D]` → `[N, 2D]` as `concat(mean, std)`.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let alpha = self.weights(h)?;
        weighted_stats(h, &alpha)
    }
}

/// Weighted mean and standard deviation over time; the variance is clamped
/// at zero before the square root (with a zero gradient there).
pub fn weighted_stats(h: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let a = alpha.unsqueeze(2)?;
    let mu = h.broadcast_mul(&a)?.sum(1)?;
    let m2 = h.sqr()?.broadcast_mul(&a)?.sum(1)?;
    let var = (m2 - mu.sqr()?)?;
    let pos = var.gt(0.0)?;
    let safe = pos.where_cond(&var, &var.ones_like()?)?;
    let sigma = pos.where_cond(&safe.sqrt()?, &var.zeros_like()?)?;
    Ok(Tensor::cat(&[mu, sigma], 1)?)
}
