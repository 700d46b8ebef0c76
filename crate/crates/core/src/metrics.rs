//! Restoration quality metrics and the batch evaluation driver.
//!
//! PSNR convention: both images are first rescaled by `255 / peak` so the
//! error is measured on the standard 8-bit range, then
//! `10 * log10(255^2 / MSE)`. Identical images report the infinity
//! sentinel. SSIM uses the standard 11x11 Gaussian window (sigma 1.5),
//! K1 = 0.01, K2 = 0.03, L = 255, averaged over all fully-covered windows.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log10};

use crate::diffusion::{forward, DiffusionModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::noise::{derive_seed, sample_poisson, scale_to_peak};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_L: f64 = 255.0;

/// Peak signal-to-noise ratio in dB. `peak` is the intensity scale of the
/// inputs; both are brought to the `[0, 255]` range before the MSE.
pub fn psnr(estimate: &Image, reference: &Image, peak: f64) -> Result<f64> {
    if !estimate.same_size(reference) {
        return Err(Error::SizeMismatch);
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::NonPositivePeak);
    }
    let s = 255.0 / peak;
    let mut sq = 0.0;
    for (&a, &b) in estimate.data().iter().zip(reference.data()) {
        let d = a * s - b * s;
        sq += d * d;
    }
    let mse = sq / estimate.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * log10(255.0 * 255.0 / mse))
}

/// Sampled Gaussian window, normalized to unit sum.
fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - c;
            exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Valid-mode separable windowed mean: horizontal pass then vertical pass.
/// Output is `(w - n + 1) x (h - n + 1)`.
fn windowed_mean(x: &Image, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (w, h) = (x.width(), x.height());
    let ow = w - n + 1;
    let mut rows = vec![0.0; ow * h];
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * x.data()[i * w + j + t];
            }
            rows[i * ow + j] = acc;
        }
    }
    let oh = h - n + 1;
    let mut out = vec![0.0; ow * oh];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * rows[(i + t) * ow + j];
            }
            out[i * ow + j] = acc;
        }
    }
    out
}

/// Mean structural similarity over all fully-covered windows. Inputs are
/// expected on the `[0, 255]` scale.
pub fn ssim(estimate: &Image, reference: &Image) -> Result<f64> {
    if !estimate.same_size(reference) {
        return Err(Error::SizeMismatch);
    }
    let (w, h) = (estimate.width(), estimate.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::WindowTooLarge { window: SSIM_WINDOW, width: w, height: h });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);

    let aa = {
        let mut m = estimate.clone();
        for (v, &a) in m.data_mut().iter_mut().zip(estimate.data()) {
            *v = a * a;
        }
        m
    };
    let bb = {
        let mut m = reference.clone();
        for (v, &b) in m.data_mut().iter_mut().zip(reference.data()) {
            *v = b * b;
        }
        m
    };
    let ab = {
        let mut m = estimate.clone();
        for (v, &b) in m.data_mut().iter_mut().zip(reference.data()) {
            *v *= b;
        }
        m
    };

    let mu_a = windowed_mean(estimate, &taps);
    let mu_b = windowed_mean(reference, &taps);
    let m_aa = windowed_mean(&aa, &taps);
    let m_bb = windowed_mean(&bb, &taps);
    let m_ab = windowed_mean(&ab, &taps);

    let mut total = 0.0;
    for p in 0..mu_a.len() {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let var_a = m_aa[p] - ma * ma;
        let var_b = m_bb[p] - mb * mb;
        let cov = m_ab[p] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// One evaluated (peak, image) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub peak: f64,
    pub image_id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-peak averages over the image set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalAggregate {
    pub peak: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<EvalAggregate>,
}

fn model_for_peak(models: &[DiffusionModel], peak: f64) -> Result<&DiffusionModel> {
    models
        .iter()
        .find(|m| (m.training_peak - peak).abs() <= 1e-9 * peak.max(1.0))
        .ok_or(Error::MissingModel { peak_milli: (peak * 1000.0) as i64 })
}

/// Degrades every image at every peak (deterministically in `seed`), runs
/// the matching model, and reports PSNR/SSIM per image plus per-peak means.
pub fn evaluate_set(
    models: &[DiffusionModel],
    images: &[Image],
    peaks: &[f64],
    seed: u64,
) -> Result<EvalReport> {
    // fail fast if any peak lacks a model
    for &peak in peaks {
        model_for_peak(models, peak)?;
    }
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (pi, &peak) in peaks.iter().enumerate() {
        let model = model_for_peak(models, peak)?;
        let mut sum_psnr = 0.0;
        let mut sum_ssim = 0.0;
        for (ii, clean255) in images.iter().enumerate() {
            let u = scale_to_peak(clean255, peak)?;
            let f = sample_poisson(&u, derive_seed(seed, pi as u64, ii as u64))?;
            let estimate = forward(&f, model)?;
            let p = psnr(&estimate, &u, peak)?;
            let to8 = 255.0 / peak;
            let s = ssim(&estimate.map(|v| v * to8), &u.map(|v| v * to8))?;
            sum_psnr += p;
            sum_ssim += s;
            rows.push(EvalRow { peak, image_id: ii, psnr_db: p, ssim: s });
        }
        aggregates.push(EvalAggregate {
            peak,
            mean_psnr_db: sum_psnr / images.len() as f64,
            mean_ssim: sum_ssim / images.len() as f64,
        });
    }
    Ok(EvalReport { rows, aggregates })
}
