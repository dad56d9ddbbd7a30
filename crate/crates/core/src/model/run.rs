use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::update::{self, fit_from_energy};
use super::{
    FactorState, HyperParams, IterRecord, ModelState, NoiseState, Problem, RunTrace, SliceFactor, SparseState,
};
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::tensor::{ComplexTensor, RealTensor};
use crate::transform::{CMat, TransformSpec};
use crate::tsvd::{slice_svds, sqrt_split, MultiRank};

/// Final estimates of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x_hat: RealTensor,
    pub s_hat: RealTensor,
    pub multirank: MultiRank,
    pub trace: RunTrace,
}

/// Starting point: truncated per-slice SVD of `Ȳ` split evenly between the
/// two factors, `Σ = φ I`, `⟨λ⟩ = 1/φ`, `⟨τ⟩ = 1`, `⟨β⟩ = 1/σ0²` and
/// `⟨S⟩` drawn uniformly from `[0, σ0)`.
pub fn init_state(p: &Problem, seed: u64) -> Result<ModelState> {
    let phi = p.phi();
    let svds = slice_svds(&p.ybar, p.l, true)?;
    let slices = svds
        .iter()
        .zip(p.init_rank.as_slice())
        .map(|(svd, &r)| {
            let (u_mean, v_mean) = sqrt_split(svd, r);
            let sigma = CMat::identity(r, r) * Complex64::new(phi, 0.0);
            SliceFactor { u_mean, v_mean, sigma_u: sigma.clone(), sigma_v: sigma }
        })
        .collect();
    let mut factors = FactorState { slices };
    p.sync_mirrors(&mut factors);

    let hp = &p.hp;
    let shape = p.y.shape().to_vec();
    let sigma0 = hp.sigma0_sq.sqrt();
    let mut rng = stream(seed, Stream::SparseInit);
    let data: Vec<f64> = (0..p.y.len()).map(|_| rng.random_range(0.0..sigma0)).collect();
    let s_mean = RealTensor::new(shape.clone(), data)?;
    let filled = |v: f64| RealTensor::new(shape.clone(), vec![v; p.y.len()]);
    let sparse = SparseState {
        s_var: filled(hp.sigma0_sq)?,
        beta_a: filled(1.0)?,
        beta_b: filled(hp.sigma0_sq)?,
        s_mean,
    };

    let ranks = factors.multirank();
    let noise = NoiseState {
        tau_a: 1.0,
        tau_b: 1.0,
        lambda_a: ranks.0.iter().map(|&r| vec![1.0; r]).collect(),
        lambda_b: ranks.0.iter().map(|&r| vec![phi; r]).collect(),
        fit: 0.0,
    };
    let sbar = p.l.forward(&sparse.s_mean)?;
    Ok(ModelState { factors, sparse, noise, sbar })
}

/// `X̂ = L^{-1}(⟨Ū⟩ △ ⟨V̄⟩†)`.
pub fn reconstruct_x(state: &ModelState, p: &Problem) -> Result<RealTensor> {
    let (i1, i2) = (p.y.rows(), p.y.cols());
    let canonical: Vec<Option<CMat>> = state
        .factors
        .slices
        .par_iter()
        .enumerate()
        .map(|(k, f)| match (p.source(k), f.rank()) {
            (Some(_), _) => None,
            (None, 0) => Some(DMatrix::zeros(i1, i2)),
            (None, _) => Some(f.product()),
        })
        .collect();
    let slices: Vec<CMat> = (0..canonical.len())
        .map(|k| match (&canonical[k], p.source(k)) {
            (Some(m), _) => m.clone(),
            (None, Some(src)) => canonical[src].as_ref().map(|m| m.conjugate()).unwrap_or_else(|| DMatrix::zeros(i1, i2)),
            (None, None) => unreachable!("canonical slice without a product"),
        })
        .collect();
    let xbar = ComplexTensor::from_slices(i1, i2, p.y.trailing(), &slices)?;
    p.l.inverse_real(&xbar)
}

/// Runs inference from the given state until the relative change of `X̂`
/// drops below the tolerance or the iteration budget is spent.
pub fn run_state(p: &Problem, mut state: ModelState) -> Result<(RunOutput, ModelState)> {
    let hp = &p.hp;
    let mut trace = RunTrace::default();
    let mut x_prev = reconstruct_x(&state, p)?;
    for iter in 1..=hp.max_iter {
        update::update_u(&mut state, p)?;
        update::update_v(&mut state, p)?;
        update::update_lambda(&mut state, p);
        let x_s = update::update_s(&mut state, p)?;
        update::update_beta(&mut state, p);
        let e = update::update_tau(&mut state, p);
        state.noise.fit = fit_from_energy(e, p)?;
        let pruned = update::prune_columns(&mut state, p, hp.prune_threshold);
        state.check_positive()?;

        // Factors only change between the two points if columns were dropped.
        let x = if pruned { reconstruct_x(&state, p)? } else { x_s };
        let prev_norm = x_prev.frobenius_norm();
        let diff = x.distance(&x_prev)?;
        let rel_change = if prev_norm > 0.0 {
            diff / prev_norm
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        trace.iterations.push(IterRecord {
            iter,
            fit: state.noise.fit,
            rel_change,
            multirank: state.factors.multirank(),
            tau: state.noise.tau(),
        });
        x_prev = x;
        if rel_change < hp.tol {
            trace.converged = true;
            break;
        }
    }
    let out = RunOutput {
        x_hat: x_prev,
        s_hat: state.sparse.s_mean.clone(),
        multirank: state.factors.multirank(),
        trace,
    };
    Ok((out, state))
}

/// Full inference on a real observation.
pub fn run(y: &RealTensor, l: &TransformSpec, hp: &HyperParams, seed: u64) -> Result<RunOutput> {
    let p = Problem::new(y, l, hp)?;
    if p.ybar_norm() == 0.0 {
        let zeros = RealTensor::zeros(y.shape().to_vec())?;
        return Ok(RunOutput {
            x_hat: zeros.clone(),
            s_hat: zeros,
            multirank: MultiRank::uniform(0, y.num_slices()),
            trace: RunTrace { iterations: Vec::new(), converged: true, trivial: true },
        });
    }
    let state = init_state(&p, seed)?;
    Ok(run_state(&p, state)?.0)
}
