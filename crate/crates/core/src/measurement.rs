//! Per-sample measurement operators `y = A x + η`.
//!
//! Noise is drawn once, when a clean image is corrupted; afterwards an
//! operator only ever applies its deterministic linear part.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementOp {
    /// Identity map with additive Gaussian noise of standard deviation `sigma`.
    Noisy { sigma: f64 },
    /// Pixelwise binary mask; `origin` records the zeroed block, if any.
    Mask {
        mask: DenseTensor,
        origin: Option<(usize, usize)>,
        block: usize,
    },
    /// Explicit `m × n` matrix acting on the flattened image.
    Linear { matrix: DenseTensor },
}

/// Noise standard deviation giving a per-image signal-to-noise ratio of
/// `snr_db`: `σ = sqrt(mean(x²) / 10^(snr/10))`.
pub fn calibrate_noise_sigma(x: &DenseTensor, snr_db: f64) -> Result<f64> {
    let power = x.sum_sq() / x.len() as f64;
    if power == 0.0 {
        return Err(Error::Invalid("cannot calibrate noise on an all-zero image".into()));
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

impl MeasurementOp {
    /// Mask that zeroes a `block × block` square at `origin = (row, col)` in
    /// every channel.
    pub fn block_mask(shape: &[usize], block: usize, origin: (usize, usize)) -> Result<Self> {
        let (c, h, w) = match *shape {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::shape("block mask", shape, &[0, 0, 0])),
        };
        let (oy, ox) = origin;
        if block == 0 || oy + block > h || ox + block > w {
            return Err(Error::Invalid(format!(
                "{block}×{block} block at {origin:?} does not fit a {h}×{w} image"
            )));
        }
        let mut mask = DenseTensor::filled(&[c, h, w], 1.0);
        let data = mask.data_mut();
        for ch in 0..c {
            for y in oy..oy + block {
                let row = (ch * h + y) * w;
                data[row + ox..row + ox + block].fill(0.0);
            }
        }
        Ok(MeasurementOp::Mask {
            mask,
            origin: Some(origin),
            block,
        })
    }

    /// Block mask with its origin drawn uniformly over all positions where
    /// the block fits; the row is drawn before the column.
    pub fn random_block<R: Rng + ?Sized>(shape: &[usize], block: usize, rng: &mut R) -> Result<Self> {
        let (h, w) = match *shape {
            [_, h, w] => (h, w),
            _ => return Err(Error::shape("block mask", shape, &[0, 0, 0])),
        };
        if block == 0 || block > h || block > w {
            return Err(Error::Invalid(format!("{block}×{block} block does not fit a {h}×{w} image")));
        }
        let oy = rng.random_range(0..=h - block);
        let ox = rng.random_range(0..=w - block);
        Self::block_mask(shape, block, (oy, ox))
    }

    /// Zero-valued pixels of the mask (the hole), as a 0/1 tensor.
    pub fn hole(&self) -> Option<DenseTensor> {
        match self {
            MeasurementOp::Mask { mask, .. } => Some(mask.map(|m| 1.0 - m)),
            _ => None,
        }
    }

    /// `y = A x + η`, with the noise drawn here from `rng` for the noisy kind.
    pub fn corrupt<R: Rng + ?Sized>(&self, x: &DenseTensor, rng: &mut R) -> Result<DenseTensor> {
        match self {
            MeasurementOp::Noisy { sigma } => {
                let mut y = x.clone();
                for v in y.data_mut() {
                    let n: f64 = StandardNormal.sample(rng);
                    *v += sigma * n;
                }
                Ok(y)
            }
            _ => self.apply(x),
        }
    }

    /// The linear part `A x`; never adds noise.
    pub fn apply(&self, x: &DenseTensor) -> Result<DenseTensor> {
        match self {
            MeasurementOp::Noisy { .. } => Ok(x.clone()),
            MeasurementOp::Mask { mask, .. } => x.hadamard(mask).map_err(|_| Error::shape("mask apply", x.shape(), mask.shape())),
            MeasurementOp::Linear { matrix } => {
                let (m, n) = linear_dims(matrix)?;
                if x.len() != n {
                    return Err(Error::shape("linear apply", x.shape(), &[m, n]));
                }
                let col = x.reshape(&[n, 1])?;
                matrix.matmul(&col)?.reshape(&[m])
            }
        }
    }

    /// `‖A x − y‖²`; for a mask only observed pixels count.
    pub fn residual(&self, x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
        let ax = self.apply(x)?;
        if ax.shape() != y.shape() {
            return Err(Error::shape("residual", ax.shape(), y.shape()));
        }
        match self {
            MeasurementOp::Mask { mask, .. } => Ok(ax
                .data()
                .iter()
                .zip(y.data())
                .zip(mask.data())
                .map(|((a, b), m)| m * (a - b) * (a - b))
                .sum()),
            _ => Ok(ax.sub(y)?.sum_sq()),
        }
    }

    /// `∂/∂x ‖A x − y‖² = 2 Aᵀ(A x − y)`.
    pub fn grad_through(&self, x: &DenseTensor, y: &DenseTensor) -> Result<DenseTensor> {
        let ax = self.apply(x)?;
        if ax.shape() != y.shape() {
            return Err(Error::shape("grad_through", ax.shape(), y.shape()));
        }
        match self {
            MeasurementOp::Noisy { .. } => Ok(ax.sub(y)?.scale(2.0)),
            MeasurementOp::Mask { mask, .. } => Ok(ax.sub(y)?.hadamard(mask)?.scale(2.0)),
            MeasurementOp::Linear { matrix } => {
                let (m, _) = linear_dims(matrix)?;
                let r = ax.sub(y)?.reshape(&[1, m])?;
                r.matmul(matrix)?.scale(2.0).reshape(x.shape())
            }
        }
    }

    /// Image-shaped encoder input for a measurement: the measurement itself
    /// for noise and masks, `Aᵀ y` for a general linear map.
    pub fn encoder_input(&self, y: &DenseTensor, image_shape: &[usize]) -> Result<DenseTensor> {
        match self {
            MeasurementOp::Linear { matrix } => {
                let (m, _) = linear_dims(matrix)?;
                if y.len() != m {
                    return Err(Error::shape("encoder input", y.shape(), &[m]));
                }
                y.reshape(&[1, m])?.matmul(matrix)?.reshape(image_shape)
            }
            _ => {
                if y.shape() != image_shape {
                    return Err(Error::shape("encoder input", y.shape(), image_shape));
                }
                Ok(y.clone())
            }
        }
    }
}

fn linear_dims(matrix: &DenseTensor) -> Result<(usize, usize)> {
    match *matrix.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(Error::Invalid(format!("linear operator must be a matrix, got {:?}", matrix.shape()))),
    }
}
