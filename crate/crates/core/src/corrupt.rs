//! Outlier-plus-noise corruption of a clean tensor.
//!
//! The pipeline replaces `⌊ρ N⌋` entries chosen without replacement by
//! uniform draws from `[low, high]`, optionally maps `[low, high]` onto
//! `[0, 1]`, and finally adds Gaussian noise of variance `σ²`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::synth::outlier_count;
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptConfig {
    pub rho: f64,
    pub sigma_sq: f64,
    pub low: f64,
    pub high: f64,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for CorruptConfig {
    fn default() -> Self {
        Self { rho: 0.2, sigma_sq: 1e-4, low: 0.0, high: 255.0, normalize: true, seed: 0 }
    }
}

impl CorruptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 must be >= 0, got {}", self.sigma_sq)));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::InvalidParameter(format!("invalid range [{}, {}]", self.low, self.high)));
        }
        Ok(())
    }
}

/// Affine map of `[low, high]` onto `[0, 1]`.
pub fn normalize(x: &RealTensor, low: f64, high: f64) -> RealTensor {
    let span = high - low;
    x.map(|v| (v - low) / span)
}

/// Runs the pipeline on `x`. Randomness comes from the corrupt stream of
/// `cfg.seed`, drawn as positions, outlier values, then noise.
pub fn corrupt(x: &RealTensor, cfg: &CorruptConfig) -> Result<RealTensor> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Corrupt);
    let mut y = x.clone();
    let n = y.len();
    let positions = sample(&mut rng, n, outlier_count(cfg.rho, n)).into_vec();
    let data = y.data_mut();
    for pos in positions {
        data[pos] = rng.random_range(cfg.low..=cfg.high);
    }
    if cfg.normalize {
        y = normalize(&y, cfg.low, cfg.high);
    }
    if cfg.sigma_sq > 0.0 {
        let normal = Normal::new(0.0, cfg.sigma_sq.sqrt())
            .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
        for v in y.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(y)
}
