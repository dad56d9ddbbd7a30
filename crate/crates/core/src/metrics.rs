//! Image-quality scores for comparing an estimate with a reference.
//!
//! Frames are the mode-1/mode-2 slices, one per trailing index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// dB; `+inf` for identical inputs.
    #[serde(with = "crate::report::float")]
    pub psnr: f64,
    pub ssim: f64,
    pub ergas: f64,
    /// Degrees.
    pub sam: f64,
}

fn same_shape(a: &RealTensor, b: &RealTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10 log10(N ‖X_gt‖∞² / ‖X̂ − X_gt‖²_F)`; `+inf` when the inputs agree.
pub fn psnr(x_hat: &RealTensor, x_gt: &RealTensor) -> Result<f64> {
    same_shape(x_hat, x_gt)?;
    let err: f64 = x_hat.data().iter().zip(x_gt.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = x_gt.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(10.0 * (x_gt.len() as f64 * peak * peak / err).log10())
}

/// Mean SSIM over all frames and all `window x window` positions (stride
/// one, no padding, population statistics). `data_range` defaults to
/// `max(x_gt) − min(x_gt)`, or 1 when the reference is constant.
pub fn ssim(x_hat: &RealTensor, x_gt: &RealTensor, window: usize, data_range: Option<f64>) -> Result<f64> {
    same_shape(x_hat, x_gt)?;
    let (rows, cols) = (x_gt.rows(), x_gt.cols());
    if window == 0 || rows < window || cols < window {
        return Err(Error::InvalidParameter(format!(
            "{rows}x{cols} frames are smaller than the {window}x{window} window"
        )));
    }
    let range = match data_range {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(Error::InvalidParameter(format!("data range must be positive, got {r}"))),
        None => {
            let (lo, hi) = x_gt
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        }
    };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let frames: Vec<f64> = (0..x_gt.num_slices())
        .into_par_iter()
        .map(|k| ssim_frame(x_hat.slice_data(k), x_gt.slice_data(k), rows, cols, window, c1, c2))
        .collect();
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

fn ssim_frame(a: &[f64], b: &[f64], rows: usize, cols: usize, w: usize, c1: f64, c2: f64) -> f64 {
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for j0 in 0..=cols - w {
        for i0 in 0..=rows - w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in j0..j0 + w {
                for i in i0..i0 + w {
                    let (x, y) = (a[i + rows * j], b[i + rows * j]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// `100 · scale · sqrt(mean_f MSE_f / μ_f²)` with `μ_f` the reference frame mean.
pub fn ergas(x_hat: &RealTensor, x_gt: &RealTensor, scale: f64) -> Result<f64> {
    same_shape(x_hat, x_gt)?;
    let frames = x_gt.num_slices();
    let mut acc = 0.0;
    for k in 0..frames {
        let (a, b) = (x_hat.slice_data(k), x_gt.slice_data(k));
        let n = b.len() as f64;
        let mean = b.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return Err(Error::DegenerateInput(format!("reference frame {k} has zero mean")));
        }
        let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 * scale * (acc / frames as f64).sqrt())
}

/// Mean spectral angle in degrees. Spectra run along `mode` (the last mode
/// by default); pixels where either spectrum is zero are skipped.
pub fn sam(x_hat: &RealTensor, x_gt: &RealTensor, mode: Option<usize>) -> Result<f64> {
    same_shape(x_hat, x_gt)?;
    let shape = x_gt.shape();
    let mode = mode.unwrap_or(shape.len() - 1);
    if mode >= shape.len() {
        return Err(Error::InvalidMode { mode, order: shape.len() });
    }
    let stride: usize = shape[..mode].iter().product();
    let len = shape[mode];
    let outer: usize = shape[mode + 1..].iter().product();
    let (a, b) = (x_hat.data(), x_gt.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for o in 0..outer {
        for inner in 0..stride {
            let base = inner + o * stride * len;
            let (mut na, mut nb) = (0.0, 0.0);
            for t in 0..len {
                let i = base + t * stride;
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            // Angle between unit vectors via half-chord lengths: exact at 0
            // where acos of a rounded cosine is not.
            let (na, nb) = (na.sqrt(), nb.sqrt());
            let (mut diff, mut sum) = (0.0, 0.0);
            for t in 0..len {
                let i = base + t * stride;
                let (u, v) = (a[i] / na, b[i] / nb);
                diff += (u - v) * (u - v);
                sum += (u + v) * (u + v);
            }
            total += (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateInput("every spectrum is zero".into()));
    }
    Ok(total / count as f64)
}

/// Parameters of the three metrics that have any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub ssim_window: usize,
    /// `None` uses the reference's dynamic range.
    pub ssim_data_range: Option<f64>,
    pub ergas_scale: f64,
    /// Spectral mode for SAM; `None` uses the last one.
    pub sam_mode: Option<usize>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { ssim_window: SSIM_WINDOW, ssim_data_range: None, ergas_scale: 1.0, sam_mode: None }
    }
}

/// All four scores with default settings.
pub fn evaluate(x_hat: &RealTensor, x_gt: &RealTensor) -> Result<MetricReport> {
    evaluate_with(x_hat, x_gt, &MetricOptions::default())
}

pub fn evaluate_with(x_hat: &RealTensor, x_gt: &RealTensor, opts: &MetricOptions) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(x_hat, x_gt)?,
        ssim: ssim(x_hat, x_gt, opts.ssim_window, opts.ssim_data_range)?,
        ergas: ergas(x_hat, x_gt, opts.ergas_scale)?,
        sam: sam(x_hat, x_gt, opts.sam_mode)?,
    })
}
