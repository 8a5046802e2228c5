//! Stride-2, padding-1, 3×3 convolution and its transpose on `[C, H, W]`
//! images.
//!
//! Both layers lower to a matrix product against an im2col buffer. The
//! transposed layer is the exact adjoint of the forward layer with the same
//! kernel tensor, with output padding 1 so spatial extents double.

use crate::error::{Error, Result};
use crate::tensor::{gemm, DenseTensor, MatRef};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
const TAPS: usize = KERNEL * KERNEL;

/// Output extent of the strided convolution along one axis.
pub fn conv_out_extent(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

/// `[c·9, ho·wo]` patch matrix; out-of-image taps read zero.
fn im2col(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
    let p = ho * wo;
    let mut cols = vec![0.0; c * TAPS * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch values back onto a `[c, h, w]` image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
    let p = ho * wo;
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ci * TAPS + ky * KERNEL + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

fn image_dims(x: &DenseTensor, channels: usize, op: &'static str) -> Result<(usize, usize)> {
    match *x.shape() {
        [c, h, w] if c == channels => {
            if h < 2 || w < 2 {
                return Err(Error::Invalid(format!("{op}: image {h}×{w} too small")));
            }
            Ok((h, w))
        }
        _ => Err(Error::shape(op, x.shape(), &[channels])),
    }
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    let p = out.len() / bias.len();
    for (plane, &b) in out.chunks_exact_mut(p).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad(grad: &mut [f64], upstream: &[f64]) {
    let p = upstream.len() / grad.len();
    for (g, plane) in grad.iter_mut().zip(upstream.chunks_exact(p)) {
        *g += plane.iter().sum::<f64>();
    }
}

/// Strided convolution (cross-correlation) layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_ch, in_ch, 3, 3]`
    pub kernels: DenseTensor,
    /// `[out_ch]`
    pub bias: DenseTensor,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    saved: Vec<f64>,
    in_h: usize,
    in_w: usize,
}

impl Conv2d {
    pub fn new(kernels: DenseTensor, bias: DenseTensor) -> Result<Self> {
        check_layer(&kernels, &bias, 0)?;
        Ok(Self { kernels, bias })
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            kernels: DenseTensor::zeros(&[out_ch, in_ch, KERNEL, KERNEL]),
            bias: DenseTensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DenseTensor) -> Result<(DenseTensor, ConvCache)> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let (h, w) = image_dims(x, cin, "conv2d input")?;
        let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
        let cols = im2col(x.data(), cin, h, w);
        let p = ho * wo;
        let mut out = vec![0.0; cout * p];
        gemm(
            cout,
            cin * TAPS,
            p,
            1.0,
            MatRef::rows(self.kernels.data(), cin * TAPS),
            MatRef::rows(&cols, p),
            0.0,
            &mut out,
        );
        add_bias(&mut out, self.bias.data());
        let y = DenseTensor::new(vec![cout, ho, wo], out)?;
        Ok((y, ConvCache { saved: cols, in_h: h, in_w: w }))
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(&self, cache: &ConvCache, upstream: &DenseTensor, grads: &mut Conv2d) -> Result<DenseTensor> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let (ho, wo) = (conv_out_extent(cache.in_h), conv_out_extent(cache.in_w));
        let expected = [cout, ho, wo];
        if upstream.shape() != expected {
            return Err(Error::shape("conv2d upstream", upstream.shape(), &expected));
        }
        let p = ho * wo;
        gemm(
            cout,
            p,
            cin * TAPS,
            1.0,
            MatRef::rows(upstream.data(), p),
            MatRef::transposed(&cache.saved, p),
            1.0,
            grads.kernels.data_mut(),
        );
        accumulate_bias_grad(grads.bias.data_mut(), upstream.data());
        let mut dcols = vec![0.0; cin * TAPS * p];
        gemm(
            cin * TAPS,
            cout,
            p,
            1.0,
            MatRef::transposed(self.kernels.data(), cin * TAPS),
            MatRef::rows(upstream.data(), p),
            0.0,
            &mut dcols,
        );
        DenseTensor::new(vec![cin, cache.in_h, cache.in_w], col2im(&dcols, cin, cache.in_h, cache.in_w))
    }
}

/// Transposed strided convolution; spatial extents double.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    /// `[in_ch, out_ch, 3, 3]`, the kernel layout of the convolution this
    /// layer is the adjoint of.
    pub kernels: DenseTensor,
    /// `[out_ch]`
    pub bias: DenseTensor,
}

impl ConvTranspose2d {
    pub fn new(kernels: DenseTensor, bias: DenseTensor) -> Result<Self> {
        check_layer(&kernels, &bias, 1)?;
        Ok(Self { kernels, bias })
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            kernels: DenseTensor::zeros(&[in_ch, out_ch, KERNEL, KERNEL]),
            bias: DenseTensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DenseTensor) -> Result<(DenseTensor, ConvCache)> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let (h, w) = match *x.shape() {
            [c, h, w] if c == cin => (h, w),
            _ => return Err(Error::shape("conv_transpose2d input", x.shape(), &[cin])),
        };
        let (oh, ow) = (h * STRIDE, w * STRIDE);
        let p = h * w;
        let mut cols = vec![0.0; cout * TAPS * p];
        gemm(
            cout * TAPS,
            cin,
            p,
            1.0,
            MatRef::transposed(self.kernels.data(), cout * TAPS),
            MatRef::rows(x.data(), p),
            0.0,
            &mut cols,
        );
        let mut out = col2im(&cols, cout, oh, ow);
        add_bias(&mut out, self.bias.data());
        let y = DenseTensor::new(vec![cout, oh, ow], out)?;
        Ok((y, ConvCache { saved: x.data().to_vec(), in_h: h, in_w: w }))
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        upstream: &DenseTensor,
        grads: &mut ConvTranspose2d,
    ) -> Result<DenseTensor> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let (h, w) = (cache.in_h, cache.in_w);
        let expected = [cout, h * STRIDE, w * STRIDE];
        if upstream.shape() != expected {
            return Err(Error::shape("conv_transpose2d upstream", upstream.shape(), &expected));
        }
        let p = h * w;
        let dcols = im2col(upstream.data(), cout, h * STRIDE, w * STRIDE);
        gemm(
            cin,
            p,
            cout * TAPS,
            1.0,
            MatRef::rows(&cache.saved, p),
            MatRef::transposed(&dcols, p),
            1.0,
            grads.kernels.data_mut(),
        );
        accumulate_bias_grad(grads.bias.data_mut(), upstream.data());
        let mut dx = vec![0.0; cin * p];
        gemm(
            cin,
            cout * TAPS,
            p,
            1.0,
            MatRef::rows(self.kernels.data(), cout * TAPS),
            MatRef::rows(&dcols, p),
            0.0,
            &mut dx,
        );
        DenseTensor::new(vec![cin, h, w], dx)
    }
}

fn check_layer(kernels: &DenseTensor, bias: &DenseTensor, out_axis: usize) -> Result<()> {
    match *kernels.shape() {
        [_, _, KERNEL, KERNEL] => {}
        _ => return Err(Error::shape("kernel", kernels.shape(), &[0, 0, KERNEL, KERNEL])),
    }
    let out = kernels.shape()[out_axis];
    if bias.shape() != [out] {
        return Err(Error::shape("bias", bias.shape(), &[out]));
    }
    Ok(())
}
