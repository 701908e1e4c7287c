//! Convolution as an explicit patch gather followed by one matrix product.
//!
//! Activations are NHWC. The gather (`im2col`) and its adjoint scatter
//! (`col2im`) are custom ops so that the backward pass is a single GEMM plus a
//! cheap scatter, instead of a transposed convolution. Nearest-neighbour
//! upsampling by an integer factor is folded into the gather: the patch reads
//! from a virtual `h*up x w*up` input.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

/// Static geometry of one gather.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub upsample: usize,
}

impl PatchGeometry {
    pub fn out_height(&self) -> usize {
        (self.height * self.upsample + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width * self.upsample + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn row_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    /// Source pixel (in the stored, non-upsampled input) for output position
    /// `(oy, ox)` and kernel tap `(ky, kx)`, or `None` when it falls in padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
        let vh = (self.height * self.upsample) as isize;
        let vw = (self.width * self.upsample) as isize;
        if iy < 0 || ix < 0 || iy >= vh || ix >= vw {
            return None;
        }
        Some((iy as usize / self.upsample, ix as usize / self.upsample))
    }
}

fn gather<T: WithDType>(src: &[T], g: &PatchGeometry) -> Vec<T> {
    let (ho, wo, c, k) = (g.out_height(), g.out_width(), g.channels, g.kernel);
    let row = g.row_len();
    let mut out = vec![T::zero(); g.rows() * row];
    for b in 0..g.batch {
        let image = &src[b * g.height * g.width * c..][..g.height * g.width * c];
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut out[((b * ho + oy) * wo + ox) * row..][..row];
                for ky in 0..k {
                    for kx in 0..k {
                        if let Some((sy, sx)) = g.source(oy, ox, ky, kx) {
                            let from = &image[(sy * g.width + sx) * c..][..c];
                            dst[(ky * k + kx) * c..][..c].copy_from_slice(from);
                        }
                    }
                }
            }
        }
    }
    out
}

fn scatter<T: WithDType>(cols: &[T], g: &PatchGeometry) -> Vec<T> {
    let (ho, wo, c, k) = (g.out_height(), g.out_width(), g.channels, g.kernel);
    let row = g.row_len();
    let mut out = vec![T::zero(); g.batch * g.height * g.width * c];
    for b in 0..g.batch {
        let image = &mut out[b * g.height * g.width * c..][..g.height * g.width * c];
        for oy in 0..ho {
            for ox in 0..wo {
                let src = &cols[((b * ho + oy) * wo + ox) * row..][..row];
                for ky in 0..k {
                    for kx in 0..k {
                        if let Some((sy, sx)) = g.source(oy, ox, ky, kx) {
                            let to = &mut image[(sy * g.width + sx) * c..][..c];
                            for (t, s) in to.iter_mut().zip(&src[(ky * k + kx) * c..][..c]) {
                                *t += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn contiguous_slice<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("patch ops require contiguous input"),
    }
}

struct Im2Col(PatchGeometry);
struct Col2Im(PatchGeometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col-nhwc"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.rows(), g.row_len()));
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(gather(contiguous_slice(v, l)?, g)),
            CpuStorage::F64(v) => CpuStorage::F64(gather(contiguous_slice(v, l)?, g)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im-nhwc"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.batch, g.height, g.width, g.channels));
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(scatter(contiguous_slice(v, l)?, g)),
            CpuStorage::F64(v) => CpuStorage::F64(scatter(contiguous_slice(v, l)?, g)),
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, shape))
    }
}

/// 2-D convolution on an NHWC tensor.
///
/// `weight` has shape `(kernel*kernel*c_in, c_out)` with rows ordered
/// `(ky, kx, c_in)`; `bias` has shape `(c_out,)`.
pub fn conv2d_nhwc(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    kernel: usize,
    stride: usize,
    padding: usize,
    upsample: usize,
) -> Result<Tensor> {
    let (batch, height, width, channels) = x.dims4()?;
    let geometry = PatchGeometry {
        batch,
        height,
        width,
        channels,
        kernel,
        stride,
        padding,
        upsample,
    };
    let (rows, c_out) = weight.dims2()?;
    if rows != geometry.row_len() {
        return Err(Error::Shape(format!(
            "conv weight has {rows} rows, expected {} for k={kernel} c_in={channels}",
            geometry.row_len()
        )));
    }
    let cols = x.contiguous()?.apply_op1(Im2Col(geometry))?;
    let mut out = cols.matmul(weight)?;
    if let Some(bias) = bias {
        out = out.broadcast_add(bias)?;
    }
    Ok(out.reshape((batch, geometry.out_height(), geometry.out_width(), c_out))?)
}
