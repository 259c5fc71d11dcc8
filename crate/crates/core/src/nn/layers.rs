use candle_core::{DType, Tensor, Var, D};

use super::params::Scope;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

/// Gated linear unit over `dim`: first half times sigmoid of the second half.
pub fn glu(x: &Tensor, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)?;
    if n % 2 != 0 {
        return Err(Error::shape(format!("glu needs an even size on dim {dim}, got {n}")));
    }
    let a = x.narrow(dim, 0, n / 2)?;
    let b = x.narrow(dim, n / 2, n / 2)?;
    Ok((a * sigmoid(&b)?)?)
}

/// Fully connected layer acting on the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &Scope, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = s.uniform("weight", &[out_dim, in_dim], bound)?;
        let bias = if bias {
            Some(s.uniform("bias", &[out_dim], bound)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().ok_or_else(|| Error::shape("linear on a scalar"))?;
        let (out_dim, w_in) = self.weight.dims2()?;
        if in_dim != w_in {
            return Err(Error::shape(format!("linear expects last dim {w_in}, got {in_dim}")));
        }
        let rows = x.elem_count() / in_dim;
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

/// 2-D convolution on `[N, C, H, W]` with square kernels and symmetric padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        s: &Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weight = s.uniform("weight", &[out_ch, in_ch, kernel, kernel], bound)?;
        let bias = if bias {
            Some(s.uniform("bias", &[out_ch], bound)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = super::conv::conv2d(x, &self.weight, self.padding, self.stride)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

/// Transposed 2-D convolution; weight layout `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s: &Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((out_ch * kernel * kernel) as f64).sqrt();
        let weight = s.uniform("weight", &[in_ch, out_ch, kernel, kernel], bound)?;
        let bias = if bias {
            Some(s.uniform("bias", &[out_ch], bound)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = super::conv::conv_transpose2d(x, &self.weight, self.padding, self.output_padding, self.stride)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        Some(b) => {
            let c = b.dim(0)?;
            Ok(y.broadcast_add(&b.reshape((1, c, 1, 1))?)?)
        }
        None => Ok(y),
    }
}

/// Batch normalisation over every axis but the channel axis (dim 1).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    pub running_mean: Var,
    pub running_var: Var,
    channels: usize,
}

impl BatchNorm {
    pub fn new(s: &Scope, channels: usize) -> Result<Self> {
        let weight = s.constant("weight", &[channels], 1.0)?;
        let bias = s.constant("bias", &[channels], 0.0)?;
        s.buffer("running_mean", &[channels], 0.0)?;
        s.buffer("running_var", &[channels], 1.0)?;
        Ok(Self {
            weight,
            bias,
            running_mean: s.var("running_mean")?,
            running_var: s.var("running_var")?,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        if dims.len() < 2 || dims[1] != self.channels {
            return Err(Error::shape(format!(
                "batch norm expects [N, {}, ...], got {:?}",
                self.channels, dims
            )));
        }
        let n = dims[0];
        let rest: usize = dims[2..].iter().product();
        let flat = x.reshape((n, self.channels, rest))?;
        let mut bshape = vec![1; dims.len()];
        bshape[1] = self.channels;
        let (mean, var) = if train {
            let count = n * rest;
            if count < 2 {
                return Err(Error::shape("batch norm in training mode needs more than one value per channel"));
            }
            let mean = flat.mean_keepdim(2)?.mean_keepdim(0)?;
            let centred = flat.broadcast_sub(&mean)?;
            let var = centred.sqr()?.mean_keepdim(2)?.mean_keepdim(0)?;
            let m = mean.flatten_all()?.detach();
            let v = (var.flatten_all()?.detach() * (count as f64 / (count - 1) as f64))?;
            let rm = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))? + (m * BN_MOMENTUM)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))? + (v * BN_MOMENTUM)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean.reshape(bshape.as_slice())?, var.reshape(bshape.as_slice())?)
        } else {
            (
                self.running_mean.as_tensor().reshape(bshape.as_slice())?,
                self.running_var.as_tensor().reshape(bshape.as_slice())?,
            )
        };
        let xhat = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.weight.reshape(bshape.as_slice())?)?
            .broadcast_add(&self.bias.reshape(bshape.as_slice())?)?)
    }
}

/// Layer normalisation over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(s: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: s.constant("weight", &[dim], 1.0)?,
            bias: s.constant("bias", &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(layer_norm_plain(x)?.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Zero-mean, unit-variance normalisation of the last dimension, without affine terms.
pub fn layer_norm_plain(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centred = x.broadcast_sub(&mean)?;
    let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centred.broadcast_div(&(var + LN_EPS)?.sqrt()?)?)
}

/// Depthwise 1-D convolution over `[N, C, T]` with "same" padding and an odd kernel.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    /// `[C, 1, K]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl DepthwiseConv1d {
    pub fn new(s: &Scope, channels: usize, kernel: usize, bias: bool) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("depthwise kernel must be odd, got {kernel}")));
        }
        let bound = 1.0 / (kernel as f64).sqrt();
        let weight = s.uniform("weight", &[channels, 1, kernel], bound)?;
        let bias = if bias {
            Some(s.uniform("bias", &[channels], bound)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, t) = x.dims3()?;
        let (wc, _, k) = self.weight.dims3()?;
        if wc != c {
            return Err(Error::shape(format!("depthwise conv expects {wc} channels, got {c}")));
        }
        let pad = (k - 1) / 2;
        let xp = x.pad_with_zeros(2, pad, pad)?;
        let mut acc: Option<Tensor> = None;
        for j in 0..k {
            let w = self.weight.narrow(2, j, 1)?.reshape((1, c, 1))?;
            let term = xp.narrow(2, j, t)?.broadcast_mul(&w)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        let y = acc.expect("kernel has at least one tap");
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, c, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Single-direction LSTM with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(s: &Scope, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: s.uniform("weight_ih", &[4 * hidden, input], bound)?,
            w_hh: s.uniform("weight_hh", &[4 * hidden, hidden], bound)?,
            b_ih: s.uniform("bias_ih", &[4 * hidden], bound)?,
            b_hh: s.uniform("bias_hh", &[4 * hidden], bound)?,
            hidden,
        })
    }

    /// `[N, T, I]` → `[N, T, H]`; `reverse` runs the recurrence from the last step.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (n, t, i) = x.dims3()?;
        let h = self.hidden;
        let xw = x
            .reshape((n * t, i))?
            .matmul(&self.w_ih.t()?)?
            .broadcast_add(&(&self.b_ih + &self.b_hh)?)?
            .reshape((n, t, 4 * h))?;
        let mut hs = Tensor::zeros((n, h), x.dtype(), x.device())?;
        let mut cs = hs.clone();
        let mut outs: Vec<Tensor> = Vec::with_capacity(t);
        let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for step in steps {
            let gates = (xw.narrow(1, step, 1)?.squeeze(1)? + hs.matmul(&self.w_hh.t()?)?)?;
            let ig = sigmoid(&gates.narrow(1, 0, h)?)?;
            let fg = sigmoid(&gates.narrow(1, h, h)?)?;
            let gg = gates.narrow(1, 2 * h, h)?.tanh()?;
            let og = sigmoid(&gates.narrow(1, 3 * h, h)?)?;
            cs = ((fg * &cs)? + (ig * gg)?)?;
            hs = (og * cs.tanh()?)?;
            outs.push(hs.clone());
        }
        if reverse {
            outs.reverse();
        }
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Forward and backward LSTMs with concatenated outputs.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(s: &Scope, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(&s.pp("forward"), input, hidden)?,
            bwd: Lstm::new(&s.pp("backward"), input, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.fwd.forward(x, false)?;
        let b = self.bwd.forward(x, true)?;
        Ok(Tensor::cat(&[f, b], 2)?)
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("cannot 2x2-pool a {h}x{w} map")));
    }
    let (n, c, h2, w2) = (x.dim(0)?, x.dim(1)?, h / 2, w / 2);
    // candle's max_pool2d backward scales gradients by 1/4, so pool via reshape + max.
    let x = x.narrow(2, 0, 2 * h2)?.narrow(3, 0, 2 * w2)?.contiguous()?;
    Ok(x.reshape((n, c, h2, 2, w2, 2))?.max(5)?.max(3)?)
}

/// Stacks `[T, F]` row-major matrices into a `[N, T, F]` tensor.
pub fn stack_features(feats: &[&ndarray::Array2<f64>], dtype: DType) -> Result<Tensor> {
    let first = feats.first().ok_or_else(|| Error::invalid("empty feature batch"))?;
    let (t, f) = first.dim();
    let mut data = Vec::with_capacity(feats.len() * t * f);
    for m in feats {
        if m.dim() != (t, f) {
            return Err(Error::shape(format!("feature batch mixes {:?} and {:?}", (t, f), m.dim())));
        }
        data.extend(m.iter().copied());
    }
    Ok(Tensor::from_vec(data, (feats.len(), t, f), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of [`stack_features`] for a single item.
pub fn tensor_to_array2(t: &Tensor) -> Result<ndarray::Array2<f64>> {
    let (r, c) = t.dims2()?;
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(ndarray::Array2::from_shape_vec((r, c), v).expect("length matches dims"))
}
