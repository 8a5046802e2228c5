//! Fully convolutional encoder and decoder.
//!
//! The encoder is a stack of stride-2 convolutions with ReLU between layers
//! and a linear final layer; its output, flattened channel-major, is the
//! latent code. The decoder mirrors it with transposed convolutions, ReLU
//! between layers and a Sigmoid on the output image.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::binio::{self, Reader, Writer};
use crate::conv::{Conv2d, ConvCache, ConvTranspose2d, KERNEL};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Standard deviation of the Gaussian used for kernel initialisation.
pub const INIT_STD: f64 = 0.1;

/// Layer widths and image geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of each encoder layer; the last is the latent depth.
    pub encoder_widths: Vec<usize>,
    /// Output channels of every decoder layer but the last, which always
    /// produces `channels`.
    pub decoder_widths: Vec<usize>,
}

impl Architecture {
    /// Encoder 32/64/128/16, decoder 256/128/64/C.
    pub fn standard(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            encoder_widths: vec![32, 64, 128, 16],
            decoder_widths: vec![256, 128, 64],
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.depth();
        if l == 0 || self.decoder_widths.len() + 1 != l {
            return Err(Error::Invalid(format!(
                "encoder has {} layers but decoder has {}",
                l,
                self.decoder_widths.len() + 1
            )));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::Invalid(format!("{} channels; expected 1 or 3", self.channels)));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::Invalid("zero layer width".into()));
        }
        let f = 1usize << l;
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return Err(Error::Invalid(format!(
                "image {}×{} not divisible by {f}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// `[latent depth, H / 2^L, W / 2^L]`.
    pub fn latent_shape(&self) -> [usize; 3] {
        let f = 1usize << self.depth();
        [
            *self.encoder_widths.last().expect("validated"),
            self.height / f,
            self.width / f,
        ]
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_shape().iter().product()
    }
}

/// Encoder weights θ and decoder weights γ. Also used as the gradient
/// accumulator, since gradients share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    arch: Architecture,
    pub encoder: Vec<Conv2d>,
    pub decoder: Vec<ConvTranspose2d>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<ConvCache>,
    /// Post-activation output of every layer.
    outputs: Vec<DenseTensor>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn sigmoid(v: f64) -> f64 {
    // Clamping keeps the result strictly inside (0, 1) in f64.
    let v = v.clamp(-36.0, 36.0);
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl AutoencoderParams {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let mut encoder = Vec::with_capacity(arch.depth());
        let mut cin = arch.channels;
        for &w in &arch.encoder_widths {
            encoder.push(Conv2d::zeros(cin, w));
            cin = w;
        }
        let mut decoder = Vec::with_capacity(arch.depth());
        for &w in arch.decoder_widths.iter().chain(std::iter::once(&arch.channels)) {
            decoder.push(ConvTranspose2d::zeros(cin, w));
            cin = w;
        }
        Ok(Self {
            arch: arch.clone(),
            encoder,
            decoder,
        })
    }

    /// Gaussian kernels (std 0.1) drawn encoder-first in row-major order,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        Self::init_with_std(arch, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(arch: &Architecture, std: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        for k in p.kernels_mut() {
            k.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch).expect("architecture already validated")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    fn kernels_mut(&mut self) -> impl Iterator<Item = &mut DenseTensor> {
        self.encoder
            .iter_mut()
            .map(|l| &mut l.kernels)
            .chain(self.decoder.iter_mut().map(|l| &mut l.kernels))
    }

    /// Encoder tensors (θ) in layer order, kernel then bias.
    pub fn encoder_tensors(&self) -> Vec<&DenseTensor> {
        self.encoder.iter().flat_map(|l| [&l.kernels, &l.bias]).collect()
    }

    /// Decoder tensors (γ) in layer order, kernel then bias.
    pub fn decoder_tensors(&self) -> Vec<&DenseTensor> {
        self.decoder.iter().flat_map(|l| [&l.kernels, &l.bias]).collect()
    }

    /// All tensors, θ then γ.
    pub fn tensors(&self) -> Vec<&DenseTensor> {
        let mut v = self.encoder_tensors();
        v.extend(self.decoder_tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseTensor> {
        self.encoder
            .iter_mut()
            .flat_map(|l| [&mut l.kernels, &mut l.bias])
            .chain(self.decoder.iter_mut().flat_map(|l| [&mut l.kernels, &mut l.bias]))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += c · other`, tensor by tensor.
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(c, b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    fn check_image(&self, y: &DenseTensor) -> Result<()> {
        let expected = self.arch.image_shape();
        if y.shape() != expected {
            return Err(Error::shape("encoder input", y.shape(), &expected));
        }
        Ok(())
    }

    pub fn encode(&self, y: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.encode_tape(y)?.0)
    }

    /// Latent code of length `d` plus the tape needed by
    /// [`Self::encoder_backward`].
    pub fn encode_tape(&self, y: &DenseTensor) -> Result<(DenseTensor, Tape)> {
        self.check_image(y)?;
        let n = self.encoder.len();
        let mut tape = Tape {
            caches: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut h = y.clone();
        for (l, layer) in self.encoder.iter().enumerate() {
            let (mut out, cache) = layer.forward_cached(&h)?;
            if l + 1 < n {
                out = out.map(relu);
            }
            tape.caches.push(cache);
            tape.outputs.push(out.clone());
            h = out;
        }
        let d = h.len();
        Ok((h.reshape(&[d])?, tape))
    }

    pub fn decode(&self, z: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.decode_tape(z)?.0)
    }

    /// Image with entries in `(0, 1)` plus the tape needed by
    /// [`Self::decoder_backward`].
    pub fn decode_tape(&self, z: &DenseTensor) -> Result<(DenseTensor, Tape)> {
        let d = self.latent_dim();
        if z.len() != d {
            return Err(Error::shape("latent code", z.shape(), &[d]));
        }
        let n = self.decoder.len();
        let mut tape = Tape {
            caches: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut h = z.reshape(&self.arch.latent_shape())?;
        for (l, layer) in self.decoder.iter().enumerate() {
            let (out, cache) = layer.forward_cached(&h)?;
            let out = if l + 1 < n { out.map(relu) } else { out.map(sigmoid) };
            tape.caches.push(cache);
            tape.outputs.push(out.clone());
            h = out;
        }
        Ok((h, tape))
    }

    /// Backpropagates `upstream = ∂L/∂z` through the encoder, accumulating
    /// θ-gradients into `grads`; returns `∂L/∂y`.
    pub fn encoder_backward(&self, tape: &Tape, upstream: &DenseTensor, grads: &mut Self) -> Result<DenseTensor> {
        let n = self.encoder.len();
        if tape.caches.len() != n {
            return Err(Error::Invalid("tape was not recorded by the encoder".into()));
        }
        let last = &tape.outputs[n - 1];
        if upstream.len() != last.len() {
            return Err(Error::shape("encoder upstream", upstream.shape(), &[last.len()]));
        }
        let mut g = upstream.reshape(last.shape())?;
        for l in (0..n).rev() {
            if l + 1 < n {
                g = relu_backward(&g, &tape.outputs[l])?;
            }
            g = self.encoder[l].backward(&tape.caches[l], &g, &mut grads.encoder[l])?;
        }
        Ok(g)
    }

    /// Backpropagates `upstream = ∂L/∂x̂` through the decoder, accumulating
    /// γ-gradients into `grads`; returns `∂L/∂z` (length `d`).
    pub fn decoder_backward(&self, tape: &Tape, upstream: &DenseTensor, grads: &mut Self) -> Result<DenseTensor> {
        let n = self.decoder.len();
        if tape.caches.len() != n {
            return Err(Error::Invalid("tape was not recorded by the decoder".into()));
        }
        let out = &tape.outputs[n - 1];
        if upstream.shape() != out.shape() {
            return Err(Error::shape("decoder upstream", upstream.shape(), out.shape()));
        }
        let mut g = DenseTensor::new(
            out.shape().to_vec(),
            upstream
                .data()
                .iter()
                .zip(out.data())
                .map(|(&u, &s)| u * s * (1.0 - s))
                .collect(),
        )?;
        for l in (0..n).rev() {
            if l + 1 < n {
                g = relu_backward(&g, &tape.outputs[l])?;
            }
            g = self.decoder[l].backward(&tape.caches[l], &g, &mut grads.decoder[l])?;
        }
        let d = g.len();
        g.reshape(&[d])
    }

    /// `AEP1` checkpoint: magic, layer count, image shape `C H W`, then per
    /// layer a kind tag (0 conv, 1 transposed), the four kernel extents, the
    /// kernel entries, the bias length and the bias entries. Little-endian
    /// 64-bit throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    fn writer(&self) -> Writer {
        let mut w = Writer::new(b"AEP1");
        w.u64(self.encoder.len() + self.decoder.len());
        self.arch.image_shape().iter().for_each(|&e| w.u64(e));
        let layers = self
            .encoder
            .iter()
            .map(|l| (0, &l.kernels, &l.bias))
            .chain(self.decoder.iter().map(|l| (1, &l.kernels, &l.bias)));
        for (kind, k, b) in layers {
            w.u64(kind);
            k.shape().iter().for_each(|&e| w.u64(e));
            w.reals(k.data());
            w.u64(b.len());
            w.reals(b.data());
        }
        w
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.writer().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        const LIMIT: usize = 1 << 16;
        let mut r = Reader::new(bytes, b"AEP1", path)?;
        let count = r.count(64)?;
        let (c, h, w) = (r.count(LIMIT)?, r.count(LIMIT)?, r.count(LIMIT)?);
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        for _ in 0..count {
            let kind = r.count(1)?;
            let shape = (0..4).map(|_| r.count(LIMIT)).collect::<Result<Vec<_>>>()?;
            if shape[2] != KERNEL || shape[3] != KERNEL {
                return Err(r.fail("kernel is not 3×3"));
            }
            let kernels = DenseTensor::new(shape.clone(), r.reals(shape.iter().product())?)
                .map_err(|e| r.fail(&e.to_string()))?;
            let nb = r.count(LIMIT)?;
            let bias = DenseTensor::new(vec![nb], r.reals(nb)?).map_err(|e| r.fail(&e.to_string()))?;
            let fail = |e: Error| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            };
            match kind {
                0 if decoder.is_empty() => encoder.push(Conv2d::new(kernels, bias).map_err(fail)?),
                1 => decoder.push(ConvTranspose2d::new(kernels, bias).map_err(fail)?),
                _ => return Err(r.fail("encoder layer after decoder layer")),
            }
        }
        r.finish()?;
        let arch = Architecture {
            channels: c,
            height: h,
            width: w,
            encoder_widths: encoder.iter().map(Conv2d::out_channels).collect(),
            decoder_widths: decoder
                .iter()
                .take(decoder.len().saturating_sub(1))
                .map(ConvTranspose2d::out_channels)
                .collect(),
        };
        let template = Self::zeros(&arch).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let params = Self { arch, encoder, decoder };
        let consistent = template
            .tensors()
            .iter()
            .zip(params.tensors())
            .all(|(a, b)| a.shape() == b.shape());
        if !consistent || template.decoder.len() != params.decoder.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "layer shapes do not chain".into(),
            });
        }
        Ok(params)
    }
}

fn relu_backward(g: &DenseTensor, out: &DenseTensor) -> Result<DenseTensor> {
    DenseTensor::new(
        g.shape().to_vec(),
        g.data()
            .iter()
            .zip(out.data())
            .map(|(&gv, &o)| if o > 0.0 { gv } else { 0.0 })
            .collect(),
    )
}
