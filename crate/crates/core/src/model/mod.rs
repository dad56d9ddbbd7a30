//! The robust factorization model and its variational inference engine.
//!
//! The observation is `Y = X + S + E` with `X = U *_L V^†`. Factor columns
//! carry ARD precisions `λ`, every entry of `S` has its own precision `β`,
//! and `E` shares one precision `τ`. Factor posteriors live in the transform
//! domain (one complex Gaussian per slice); `S`, `β` and `τ` live in the
//! original domain.

mod run;
mod update;

pub use run::{init_state, reconstruct_x, run, run_state, RunOutput};
pub use update::{
    compute_fit, expected_residual, hermitian_inverse, prune_columns, update_beta, update_lambda, update_s,
    update_tau, update_u, update_v,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{ComplexTensor, RealTensor};
use crate::transform::{CMat, TransformSpec};
use crate::tsvd::MultiRank;

/// Starting width of the factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitRank {
    Uniform(usize),
    PerSlice(MultiRank),
}

impl InitRank {
    pub fn resolve(&self, slices: usize) -> MultiRank {
        match self {
            InitRank::Uniform(r) => MultiRank::uniform(*r, slices),
            InitRank::PerSlice(m) => m.clone(),
        }
    }
}

/// Hyperparameters and run controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub a0_lambda: f64,
    pub b0_lambda: f64,
    pub a0_beta: f64,
    pub b0_beta: f64,
    pub a0_tau: f64,
    pub b0_tau: f64,
    /// Initial variance of the sparse component.
    pub sigma0_sq: f64,
    /// Refinement factor; `None` means `φ` of the transform.
    pub gamma: Option<f64>,
    /// Stop once the relative change of `X̂` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// `None` starts from `min(I1, I2)` columns per slice.
    pub init_rank: Option<InitRank>,
    /// Relative column energy below which a factor column is removed.
    pub prune_threshold: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            a0_lambda: 1e-6,
            b0_lambda: 1e-6,
            a0_beta: 1e-6,
            b0_beta: 1e-6,
            a0_tau: 1e-6,
            b0_tau: 1e-6,
            sigma0_sq: 1.0,
            gamma: None,
            tol: 1e-6,
            max_iter: 500,
            init_rank: None,
            prune_threshold: 1e-4,
        }
    }
}

impl HyperParams {
    /// Checks every parameter against a concrete problem and returns the
    /// per-slice initial ranks.
    pub fn validate(&self, rows: usize, cols: usize, slices: usize) -> Result<MultiRank> {
        let positive = [
            ("a0_lambda", self.a0_lambda),
            ("b0_lambda", self.b0_lambda),
            ("a0_beta", self.a0_beta),
            ("b0_beta", self.b0_beta),
            ("a0_tau", self.a0_tau),
            ("b0_tau", self.b0_tau),
            ("sigma0_sq", self.sigma0_sq),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma must be positive and finite, got {g}")));
            }
        }
        if !(self.prune_threshold.is_finite() && (0.0..1.0).contains(&self.prune_threshold)) {
            return Err(Error::InvalidParameter(format!(
                "prune_threshold must lie in [0, 1), got {}",
                self.prune_threshold
            )));
        }
        let limit = rows.min(cols);
        let ranks = match &self.init_rank {
            None => MultiRank::uniform(limit, slices),
            Some(r) => r.resolve(slices),
        };
        if ranks.len() != slices {
            return Err(Error::ShapeMismatch(format!(
                "init rank has {} entries, the tensor has {slices} slices",
                ranks.len()
            )));
        }
        if let Some(&rank) = ranks.0.iter().find(|&&r| r > limit) {
            return Err(Error::RankTooLarge { rank, limit });
        }
        Ok(ranks)
    }
}

/// Posterior of the factor rows for one transform slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFactor {
    /// `⟨Ū^(k)⟩`, `I1 x r_k`.
    pub u_mean: CMat,
    /// `⟨V̄^(k)⟩`, `I2 x r_k`.
    pub v_mean: CMat,
    /// Row covariance shared by all rows of `Ū^(k)`.
    pub sigma_u: CMat,
    pub sigma_v: CMat,
}

impl SliceFactor {
    pub fn rank(&self) -> usize {
        self.u_mean.ncols()
    }

    /// `⟨Ū†Ū⟩ = I1 Σ_u + ⟨Ū⟩†⟨Ū⟩`.
    pub fn uu(&self) -> CMat {
        let rows = self.u_mean.nrows() as f64;
        &self.sigma_u * nalgebra::Complex::new(rows, 0.0) + linalg::adj_mul(&self.u_mean, &self.u_mean)
    }

    /// `⟨V̄†V̄⟩ = I2 Σ_v + ⟨V̄⟩†⟨V̄⟩`.
    pub fn vv(&self) -> CMat {
        let rows = self.v_mean.nrows() as f64;
        &self.sigma_v * nalgebra::Complex::new(rows, 0.0) + linalg::adj_mul(&self.v_mean, &self.v_mean)
    }

    /// `⟨Ū⟩⟨V̄⟩†`.
    pub fn product(&self) -> CMat {
        linalg::mul_adj(&self.u_mean, &self.v_mean)
    }

    fn conj(&self) -> Self {
        Self {
            u_mean: self.u_mean.map(|z| z.conj()),
            v_mean: self.v_mean.map(|z| z.conj()),
            sigma_u: self.sigma_u.map(|z| z.conj()),
            sigma_v: self.sigma_v.map(|z| z.conj()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub slices: Vec<SliceFactor>,
}

impl FactorState {
    pub fn multirank(&self) -> MultiRank {
        MultiRank(self.slices.iter().map(SliceFactor::rank).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseState {
    /// `⟨S⟩`.
    pub s_mean: RealTensor,
    /// Posterior variance of every entry of `S`.
    pub s_var: RealTensor,
    pub beta_a: RealTensor,
    pub beta_b: RealTensor,
}

impl SparseState {
    pub fn beta_mean(&self, i: usize) -> f64 {
        self.beta_a.data()[i] / self.beta_b.data()[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseState {
    pub tau_a: f64,
    pub tau_b: f64,
    /// Gamma shape of `λ_r^(k)`, indexed `[k][r]`.
    pub lambda_a: Vec<Vec<f64>>,
    pub lambda_b: Vec<Vec<f64>>,
    pub fit: f64,
}

impl NoiseState {
    pub fn tau(&self) -> f64 {
        self.tau_a / self.tau_b
    }

    pub fn lambda_mean(&self, k: usize) -> Vec<f64> {
        self.lambda_a[k].iter().zip(&self.lambda_b[k]).map(|(a, b)| a / b).collect()
    }
}

/// Full variational state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub factors: FactorState,
    pub sparse: SparseState,
    pub noise: NoiseState,
    /// `L(⟨S⟩)`, refreshed whenever `⟨S⟩` changes.
    pub sbar: ComplexTensor,
}

impl ModelState {
    /// Fails when a variance or Gamma parameter is not strictly positive.
    pub fn check_positive(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::NumericalBreakdown(format!("{what} became {v}"));
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.noise.tau_a) {
            return Err(bad("tau shape", self.noise.tau_a));
        }
        if !ok(self.noise.tau_b) {
            return Err(bad("tau rate", self.noise.tau_b));
        }
        for (a, b) in self.noise.lambda_a.iter().flatten().zip(self.noise.lambda_b.iter().flatten()) {
            if !ok(*a) {
                return Err(bad("lambda shape", *a));
            }
            if !ok(*b) {
                return Err(bad("lambda rate", *b));
            }
        }
        for (name, t) in [
            ("sparse variance", &self.sparse.s_var),
            ("beta shape", &self.sparse.beta_a),
            ("beta rate", &self.sparse.beta_b),
        ] {
            if let Some(&v) = t.data().iter().find(|&&v| !ok(v)) {
                return Err(bad(name, v));
            }
        }
        Ok(())
    }
}

/// One observation together with everything derived from it that stays
/// fixed during inference.
#[derive(Debug)]
pub struct Problem<'a> {
    pub y: &'a RealTensor,
    pub ybar: ComplexTensor,
    pub l: &'a TransformSpec,
    pub hp: HyperParams,
    pub gamma: f64,
    pub init_rank: MultiRank,
    ybar_norm: f64,
    /// Slice whose state is the conjugate of this one's, when it is an
    /// earlier slice.
    source: Vec<Option<usize>>,
    /// For canonical slices, how many slices share their state.
    weight: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(y: &'a RealTensor, l: &'a TransformSpec, hp: &HyperParams) -> Result<Self> {
        if y.trailing() != l.dims() {
            return Err(Error::ShapeMismatch(format!(
                "tensor trailing modes {:?} do not match the transform {:?}",
                y.trailing(),
                l.dims()
            )));
        }
        let slices = y.num_slices();
        let init_rank = hp.validate(y.rows(), y.cols(), slices)?;
        let source: Vec<Option<usize>> = (0..slices)
            .map(|k| l.conjugate_partner(k).filter(|&p| p < k))
            .collect();
        for (k, p) in source.iter().enumerate() {
            if let Some(p) = *p {
                if init_rank.0[k] != init_rank.0[p] {
                    return Err(Error::InvalidParameter(format!(
                        "init rank must agree on conjugate slices {p} and {k}"
                    )));
                }
            }
        }
        let mut weight = vec![1.0; slices];
        for (k, p) in source.iter().enumerate() {
            if let Some(p) = *p {
                weight[p] += 1.0;
                weight[k] = 0.0;
            }
        }
        let ybar = l.forward(y)?;
        let ybar_norm = ybar.frobenius_norm();
        Ok(Self {
            y,
            ybar,
            l,
            gamma: hp.gamma.unwrap_or(l.phi()),
            hp: hp.clone(),
            init_rank,
            ybar_norm,
            source,
            weight,
        })
    }

    pub fn phi(&self) -> f64 {
        self.l.phi()
    }

    pub fn ybar_norm(&self) -> f64 {
        self.ybar_norm
    }

    pub fn num_slices(&self) -> usize {
        self.source.len()
    }

    /// Slices whose state is computed directly.
    pub fn canonical(&self) -> Vec<usize> {
        (0..self.num_slices()).filter(|&k| self.source[k].is_none()).collect()
    }

    /// Number of slices a canonical slice stands for; zero for mirrors.
    pub fn weight(&self, k: usize) -> f64 {
        self.weight[k]
    }

    /// The canonical slice holding this slice's state, if it is a mirror.
    pub fn source(&self, k: usize) -> Option<usize> {
        self.source[k]
    }

    /// Copies conjugated state from each canonical slice onto its mirror.
    fn sync_mirrors(&self, factors: &mut FactorState) {
        for k in 0..self.num_slices() {
            if let Some(p) = self.source[k] {
                factors.slices[k] = factors.slices[p].conj();
            }
        }
    }

    fn sync_lambda(&self, noise: &mut NoiseState) {
        for k in 0..self.num_slices() {
            if let Some(p) = self.source[k] {
                noise.lambda_a[k] = noise.lambda_a[p].clone();
                noise.lambda_b[k] = noise.lambda_b[p].clone();
            }
        }
    }
}

/// One entry of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    #[serde(with = "crate::report::float")]
    pub fit: f64,
    #[serde(with = "crate::report::float")]
    pub rel_change: f64,
    pub multirank: MultiRank,
    #[serde(with = "crate::report::float")]
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub iterations: Vec<IterRecord>,
    pub converged: bool,
    /// Set when the input was identically zero and no iteration ran.
    pub trivial: bool,
}
