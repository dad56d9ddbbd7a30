//! Synthetic low-multi-rank benchmark: planted `X + S + E` instances and
//! the rank / reconstruction error scores.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, HyperParams};
use crate::report::{EntryReport, PhaseTime, RunReport};
use crate::rng::{stream, Stream};
use crate::tensor::RealTensor;
use crate::transform::{TransformSpec, REAL_RESIDUE_TOL};
use crate::tsvd::{conj_transpose, t_product, truncate_multi_rank, MultiRank};

/// Named multi-rank layouts over the trailing slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    /// Full rank `R` on the first block, `R/2` (rounded down) on the second.
    Blocks,
    /// [`PatternKind::Blocks`] with the two ranks exchanged.
    BlocksSwapped,
    /// `R` on every slice.
    Uniform,
}

fn dist(i: usize, n: usize) -> usize {
    i.min(n - i)
}

/// Which slices of `trailing` fall in the first block.
///
/// Order 3 keeps slice 0 and the middle frequencies in the first block and
/// the `round(0.2 n)` lowest nonzero frequencies on either side in the
/// second. For higher orders the last trailing index decides: when it is
/// zero only the all-zero slice is in the first block; otherwise the first
/// block holds the `round(0.2 n)` lowest frequencies on either side. Both
/// layouts are symmetric under index negation, so the planted tensor is real
/// under the DFT.
pub fn first_block(trailing: &[usize]) -> Vec<bool> {
    let j: usize = trailing.iter().product();
    let mut out = Vec::with_capacity(j);
    let mut idx = vec![0usize; trailing.len()];
    for _ in 0..j {
        let last = *idx.last().expect("order >= 3");
        let n = *trailing.last().expect("order >= 3");
        let a = (0.2 * n as f64).round() as usize;
        let d = dist(last, n);
        let hit = if trailing.len() == 1 {
            d == 0 || d > a
        } else if last == 0 {
            idx.iter().all(|&i| i == 0)
        } else {
            d <= a
        };
        out.push(hit);
        crate::tensor::increment(&mut idx, trailing);
    }
    out
}

pub fn pattern(kind: PatternKind, trailing: &[usize], rank: usize) -> MultiRank {
    let half = rank / 2;
    let (a, b) = match kind {
        PatternKind::Blocks => (rank, half),
        PatternKind::BlocksSwapped => (half, rank),
        PatternKind::Uniform => (rank, rank),
    };
    MultiRank(first_block(trailing).into_iter().map(|f| if f { a } else { b }).collect())
}

/// Parses a pattern given by name (`blocks`, `blocks-swapped`, `uniform`)
/// or as an explicit comma list where `v*n` repeats `v` n times, for
/// example `5,2*10`.
pub fn parse_pattern(spec: &str, trailing: &[usize], rank: usize) -> Result<MultiRank> {
    let kind = match spec.trim() {
        "blocks" => Some(PatternKind::Blocks),
        "blocks-swapped" => Some(PatternKind::BlocksSwapped),
        "uniform" => Some(PatternKind::Uniform),
        _ => None,
    };
    if let Some(kind) = kind {
        return Ok(pattern(kind, trailing, rank));
    }
    let bad = |part: &str| Error::InvalidParameter(format!("bad pattern item '{part}' in '{spec}'"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        let (v, n) = match part.split_once('*') {
            Some((v, n)) => (v.trim(), n.trim().parse::<usize>().map_err(|_| bad(part))?),
            None => (part, 1),
        };
        let v = v.parse::<usize>().map_err(|_| bad(part))?;
        out.extend(std::iter::repeat_n(v, n));
    }
    let j: usize = trailing.iter().product();
    if out.len() != j {
        return Err(Error::InvalidParameter(format!("pattern '{spec}' has {} entries, {j} slices expected", out.len())));
    }
    Ok(MultiRank(out))
}

/// One synthetic benchmark cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: Vec<usize>,
    pub base_rank: usize,
    pub pattern: MultiRank,
    pub rho: f64,
    pub sigma_sq: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn with_kind(shape: Vec<usize>, base_rank: usize, kind: PatternKind, rho: f64, sigma_sq: f64, seed: u64) -> Self {
        let pattern = pattern(kind, &shape[2.min(shape.len())..], base_rank);
        Self { shape, base_rank, pattern, rho, sigma_sq, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.len() < 3 {
            return Err(Error::OrderTooLow(self.shape.len()));
        }
        let j: usize = self.shape[2..].iter().product();
        if self.pattern.len() != j {
            return Err(Error::ShapeMismatch(format!(
                "pattern has {} entries, the tensor has {j} slices",
                self.pattern.len()
            )));
        }
        let limit = self.shape[0].min(self.shape[1]);
        if self.base_rank > limit {
            return Err(Error::RankTooLarge { rank: self.base_rank, limit });
        }
        if let Some(&r) = self.pattern.0.iter().find(|&&r| r > self.base_rank) {
            return Err(Error::InvalidParameter(format!("pattern entry {r} exceeds the base rank {}", self.base_rank)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_sq must be >= 0, got {}", self.sigma_sq)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub y: RealTensor,
    pub x_gt: RealTensor,
    pub s_gt: RealTensor,
    pub e_gt: RealTensor,
    pub multirank_gt: MultiRank,
}

/// `⌊ρ N⌋`, robust to `ρ N` landing a hair below an integer.
pub fn outlier_count(rho: f64, n: usize) -> usize {
    let exact = rho * n as f64;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) { rounded } else { exact.floor() };
    (count as usize).min(n)
}

/// Draws one instance. Randomness comes from the generator stream of
/// `cfg.seed` in the order `U`, `V`, outlier positions, outlier values, noise.
pub fn generate(cfg: &SynthConfig, l: &TransformSpec) -> Result<SynthInstance> {
    cfg.validate()?;
    let trailing = &cfg.shape[2..];
    if trailing != l.dims() {
        return Err(Error::ShapeMismatch(format!("shape {:?} vs transform {:?}", cfg.shape, l.dims())));
    }
    for k in 0..cfg.pattern.len() {
        if let Some(p) = l.conjugate_partner(k) {
            if cfg.pattern.0[p] != cfg.pattern.0[k] {
                return Err(Error::InvalidParameter(format!(
                    "pattern infeasible: conjugate slices {k} and {p} need equal ranks for a real tensor"
                )));
            }
        }
    }
    let mut rng = stream(cfg.seed, Stream::Generator);
    let (i1, i2, r) = (cfg.shape[0], cfg.shape[1], cfg.base_rank);
    let factor = |rows: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut shape = vec![rows, r];
        shape.extend_from_slice(trailing);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        RealTensor::new(shape, data)
    };
    if r == 0 {
        return Err(Error::InvalidParameter("base rank must be positive".into()));
    }
    let u = factor(i1, &mut rng)?;
    let v = factor(i2, &mut rng)?;
    let x = t_product(&u, &conj_transpose(&v), l)?.into_real(REAL_RESIDUE_TOL)?;
    let x_gt = truncate_multi_rank(&x, l, &cfg.pattern)?.into_real(REAL_RESIDUE_TOL)?;

    let n = x_gt.len();
    let count = outlier_count(cfg.rho, n);
    let mut s = vec![0.0; n];
    let positions = sample(&mut rng, n, count).into_vec();
    for pos in positions {
        s[pos] = rng.random_range(-10.0..=10.0);
    }
    let s_gt = RealTensor::new(cfg.shape.clone(), s)?;

    let e_gt = if cfg.sigma_sq > 0.0 {
        let normal = Normal::new(0.0, cfg.sigma_sq.sqrt())
            .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        RealTensor::new(cfg.shape.clone(), data)?
    } else {
        RealTensor::zeros(cfg.shape.clone())?
    };
    let y = x_gt.add(&s_gt)?.add(&e_gt)?;
    Ok(SynthInstance { y, x_gt, s_gt, e_gt, multirank_gt: cfg.pattern.clone() })
}

/// Mean absolute per-slice rank deviation.
pub fn r_err(estimated: &MultiRank, gt: &MultiRank) -> Result<f64> {
    if estimated.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("multi-ranks of length {} and {}", estimated.len(), gt.len())));
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let total: usize = estimated.0.iter().zip(&gt.0).map(|(a, b)| a.abs_diff(*b)).sum();
    Ok(total as f64 / gt.len() as f64)
}

/// `‖X̂ − X_gt‖_F / ‖X_gt‖_F`.
pub fn x_err(x_hat: &RealTensor, x_gt: &RealTensor) -> Result<f64> {
    if x_gt.frobenius_norm() == 0.0 {
        return Err(Error::DegenerateInput("ground truth is identically zero".into()));
    }
    x_hat.relative_error(x_gt)
}

/// Hyperparameters used for synthetic runs: `σ0² = 1`, `γ = 1`, initial
/// rank `I/2` on every slice and `tol = 1e-6`.
pub fn synth_hyper(shape: &[usize]) -> HyperParams {
    HyperParams {
        sigma0_sq: 1.0,
        gamma: Some(1.0),
        tol: 1e-6,
        max_iter: 5000,
        init_rank: Some(model::InitRank::Uniform(shape[0].min(shape[1]) / 2)),
        ..HyperParams::default()
    }
}

/// Result of one benchmark cell, tensors included.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub instance: SynthInstance,
    pub output: model::RunOutput,
    pub entry: EntryReport,
    pub seconds: f64,
}

/// generate, run, score.
pub fn run_cell(cfg: &SynthConfig, hp: &HyperParams, l: &TransformSpec) -> Result<CellResult> {
    let start = Instant::now();
    let instance = generate(cfg, l)?;
    let output = model::run(&instance.y, l, hp, cfg.seed)?;
    let entry = EntryReport {
        label: format!("shape={:?} rho={} sigma2={}", cfg.shape, cfg.rho, cfg.sigma_sq),
        synth: Some(cfg.clone()),
        multirank: output.multirank.clone(),
        multirank_gt: Some(instance.multirank_gt.clone()),
        r_err: Some(r_err(&output.multirank, &instance.multirank_gt)?),
        x_err: Some(x_err(&output.x_hat, &instance.x_gt)?),
        trace: output.trace.clone(),
        metrics: None,
    };
    Ok(CellResult { instance, output, entry, seconds: start.elapsed().as_secs_f64() })
}

/// Finished grid run: the report plus every cell's tensors.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub report: RunReport,
    pub cells: Vec<CellResult>,
}

/// Runs every cell of a grid. Cells are independent and run in parallel;
/// results keep grid order.
pub fn run_benchmark(grid: &[SynthConfig], hp: &HyperParams, l: &TransformSpec) -> Result<Benchmark> {
    let start = Instant::now();
    let cells: Vec<CellResult> = grid.par_iter().map(|cfg| run_cell(cfg, hp, l)).collect::<Result<_>>()?;
    let mut report = RunReport::new("synth");
    report.transform = Some(l.echo());
    report.hyper = Some(hp.clone());
    report.seed = grid.first().map(|c| c.seed);
    for (i, cell) in cells.iter().enumerate() {
        report.entries.push(cell.entry.clone());
        report.timing.phases.push(PhaseTime { name: format!("entry-{i}"), seconds: cell.seconds });
    }
    report.timing.total_seconds = start.elapsed().as_secs_f64();
    Ok(Benchmark { report, cells })
}
