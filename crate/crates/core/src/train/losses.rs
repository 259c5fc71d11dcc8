use candle_core::{DType, Tensor};

use crate::backends::BONAFIDE_INDEX;
use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of the bona fide posterior `softmax(logits)[:, 1]`
/// against `labels` (1 = bona fide), with the posterior clamped to `[ε, 1-ε]`.
pub fn bce_loss(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    if k != 2 {
        return Err(Error::shape(format!("expected [N, 2] logits, got {:?}", logits.dims())));
    }
    if n != labels.len() {
        return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
    }
    let p = candle_nn::ops::softmax(logits, 1)?
        .narrow(1, BONAFIDE_INDEX, 1)?
        .squeeze(1)?
        .clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let y = Tensor::from_vec(y, n, logits.device())?.to_dtype(logits.dtype())?;
    let pos = (&y * p.log()?)?;
    let neg = (y.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok(((pos + neg)?.mean_all()? * -1.0)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `ce + w_mse · mse`; refuses non-finite inputs.
pub fn joint_loss(ce: &Tensor, mse: &Tensor, w_mse: f64) -> Result<Tensor> {
    let (c, m) = (scalar(ce)?, scalar(mse)?);
    if !c.is_finite() || !m.is_finite() || !w_mse.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss term (ce = {c}, mse = {m}, w_mse = {w_mse})")));
    }
    Ok((ce + (mse * w_mse)?)?)
}
