//! Convolutions as custom ops with explicit backward passes.
//!
//! candle 0.8's CPU convolution misreads non-contiguous kernels, and its
//! built-in backward feeds transposed (non-contiguous) views as kernels, so
//! the weight gradients come out wrong. These wrappers run the same kernels
//! but make every operand contiguous first.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, Device, Layout, Shape, Tensor};

fn to_tensor(s: &CpuStorage, l: &Layout) -> candle_core::Result<Tensor> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("convolution operand must be contiguous".into()))?;
    match s {
        CpuStorage::F32(v) => Tensor::from_slice(&v[a..b], l.shape().clone(), &Device::Cpu),
        CpuStorage::F64(v) => Tensor::from_slice(&v[a..b], l.shape().clone(), &Device::Cpu),
        other => Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "conv")),
    }
}

fn to_storage(t: &Tensor) -> candle_core::Result<(CpuStorage, Shape)> {
    let flat = t.flatten_all()?;
    let storage = match t.dtype() {
        candle_core::DType::F32 => CpuStorage::F32(flat.to_vec1()?),
        candle_core::DType::F64 => CpuStorage::F64(flat.to_vec1()?),
        other => return Err(candle_core::Error::UnsupportedDTypeForOp(other, "conv")),
    };
    Ok((storage, t.shape().clone()))
}

fn t01(t: &Tensor) -> candle_core::Result<Tensor> {
    t.transpose(0, 1)?.contiguous()
}

fn crop_kernel(g: Tensor, kernel: &Tensor) -> candle_core::Result<Tensor> {
    let (_, _, k0, k1) = kernel.dims4()?;
    let (_, _, g0, g1) = g.dims4()?;
    if g0 != k0 || g1 != k1 {
        g.narrow(2, 0, k0)?.narrow(3, 0, k1)
    } else {
        Ok(g)
    }
}

struct Conv2dOp {
    padding: usize,
    stride: usize,
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-checked"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = to_tensor(s1, l1)?;
        let w = to_tensor(s2, l2)?;
        to_storage(&x.conv2d(&w, self.padding, self.stride, 1, 1)?)
    }

    fn bwd(
        &self,
        arg: &Tensor,
        kernel: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let x = arg.detach().contiguous()?;
        let w = kernel.detach().contiguous()?;
        let g = grad.detach().contiguous()?;
        let (_, _, h, wd) = x.dims4()?;
        // one output padding for both axes; take the larger and crop
        let pad_for = |axis: usize, size: usize| -> candle_core::Result<usize> {
            let reach = (g.dim(axis)? - 1) * self.stride + w.dim(axis)?;
            Ok((size + 2 * self.padding).saturating_sub(reach))
        };
        let out_padding = pad_for(2, h)?.max(pad_for(3, wd)?);
        let grad_x = g.conv_transpose2d(&w, self.padding, out_padding, self.stride, 1)?;
        let grad_x = grad_x.narrow(2, 0, h)?.narrow(3, 0, wd)?.contiguous()?;
        let grad_w = t01(&t01(&x)?.conv2d(&t01(&g)?, self.padding, 1, self.stride, 1)?)?;
        Ok((Some(grad_x), Some(crop_kernel(grad_w, &w)?.contiguous()?)))
    }
}

struct ConvTranspose2dOp {
    padding: usize,
    output_padding: usize,
    stride: usize,
}

impl CustomOp2 for ConvTranspose2dOp {
    fn name(&self) -> &'static str {
        "conv-transpose2d-checked"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = to_tensor(s1, l1)?;
        let w = to_tensor(s2, l2)?;
        to_storage(&x.conv_transpose2d(&w, self.padding, self.output_padding, self.stride, 1)?)
    }

    fn bwd(
        &self,
        arg: &Tensor,
        kernel: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let x = arg.detach().contiguous()?;
        let w = kernel.detach().contiguous()?;
        let g = grad.detach().contiguous()?;
        let grad_x = g.conv2d(&w, self.padding, self.stride, 1, 1)?.contiguous()?;
        let grad_w = t01(&t01(&g)?.conv2d(&t01(&x)?, self.padding, 1, self.stride, 1)?)?;
        Ok((Some(grad_x), Some(crop_kernel(grad_w, &w)?.contiguous()?)))
    }
}

pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: usize, stride: usize) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(&kernel.contiguous()?, Conv2dOp { padding, stride })
}

pub fn conv_transpose2d(
    x: &Tensor,
    kernel: &Tensor,
    padding: usize,
    output_padding: usize,
    stride: usize,
) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(
        &kernel.contiguous()?,
        ConvTranspose2dOp {
            padding,
            output_padding,
            stride,
        },
    )
}
