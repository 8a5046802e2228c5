//! Reconstruction quality against ground truth.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Reported PSNR when the mean squared error is below [`MSE_FLOOR`].
pub const PSNR_CAP_DB: f64 = 100.0;
pub const MSE_FLOOR: f64 = 1e-10;

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10 log10(peak² / MSE)` in dB, capped at 100 dB.
pub fn psnr_with_peak(estimate: &DenseTensor, truth: &DenseTensor, peak: f64) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::shape("psnr", estimate.shape(), truth.shape()));
    }
    let mse = estimate.sub(truth)?.sum_sq() / truth.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

/// PSNR with peak 1.
pub fn psnr(estimate: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    psnr_with_peak(estimate, truth, 1.0)
}

/// PSNR over the pixels where `hole` is nonzero.
pub fn masked_psnr(estimate: &DenseTensor, truth: &DenseTensor, hole: &DenseTensor) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::shape("masked_psnr", estimate.shape(), truth.shape()));
    }
    if hole.shape() != truth.shape() {
        return Err(Error::shape("masked_psnr hole", hole.shape(), truth.shape()));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for ((e, t), h) in estimate.data().iter().zip(truth.data()).zip(hole.data()) {
        if *h != 0.0 {
            sse += (e - t) * (e - t);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Invalid("masked PSNR over an empty hole".into()));
    }
    Ok(psnr_from_mse(sse / count as f64, 1.0))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
