use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Linear, Scope};

/// Index of the bona fide logit; the spoof logit is at 0.
pub const BONAFIDE_INDEX: usize = 1;

/// Pooled statistics → embedding → two logits `[spoof, bona fide]`.
#[derive(Debug, Clone)]
pub struct Head {
    pub fc: Linear,
    pub classifier: Linear,
}

impl Head {
    pub fn new(s: &Scope, pooled_dim: usize, embedding_dim: usize) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(&s.pp("fc"), pooled_dim, embedding_dim, true)?,
            classifier: Linear::new(&s.pp("classifier"), embedding_dim, 2, true)?,
        })
    }

    pub fn embed(&self, pooled: &Tensor) -> Result<Tensor> {
        self.fc.forward(pooled)
    }

    pub fn forward(&self, pooled: &Tensor) -> Result<Tensor> {
        self.classifier.forward(&self.embed(pooled)?)
    }

    pub fn classify(&self, embedding: &Tensor) -> Result<(Tensor, Tensor)> {
        let logits = self.classifier.forward(embedding)?;
        let score = score_from_logits(&logits)?;
        Ok((logits, score))
    }
}

/// `logit(bona fide) − logit(spoof)` per row of `[N, 2]` logits.
pub fn score_from_logits(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    if k != 2 {
        return Err(Error::shape(format!("expected 2 logits per row, got {k}")));
    }
    Ok((logits.narrow(1, BONAFIDE_INDEX, 1)? - logits.narrow(1, 1 - BONAFIDE_INDEX, 1)?)?.squeeze(1)?)
}
