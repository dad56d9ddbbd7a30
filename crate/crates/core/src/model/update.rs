//! Closed-form coordinate updates.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{ModelState, Problem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::RealTensor;
use crate::transform::CMat;

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// Inverse of a Hermitian positive definite matrix through its Cholesky
/// factor. The input is symmetrized first and so is the result.
pub fn hermitian_inverse(p: &CMat) -> Result<CMat> {
    let n = p.nrows();
    let sym = (p + p.adjoint()) * c(0.5);
    let chol = Cholesky::new(sym).ok_or_else(|| {
        Error::NumericalBreakdown(format!("{n}x{n} posterior precision is not positive definite"))
    })?;
    let inv = chol.inverse();
    Ok((&inv + inv.adjoint()) * c(0.5))
}

/// Gaussian posterior over the rows of one factor given the other factor.
/// Returns `(mean, covariance)`.
/// `projected` is the residual already multiplied by the other factor's mean.
fn factor_rows(projected: CMat, other_gram: &CMat, lambda: &[f64], tau_phi: f64, reg: f64) -> Result<(CMat, CMat)> {
    let r = other_gram.ncols();
    if r == 0 {
        return Ok((projected, CMat::zeros(0, 0)));
    }
    let mut prec = other_gram * c(tau_phi);
    for (j, lam) in lambda.iter().enumerate() {
        prec[(j, j)] += c(reg * lam);
    }
    let sigma = hermitian_inverse(&prec)?;
    let mean = linalg::mul(&projected, &sigma) * c(tau_phi);
    Ok((mean, sigma))
}

/// `Ȳ^(k) − S̄^(k)`.
fn residual(p: &Problem, state: &ModelState, k: usize) -> CMat {
    p.ybar.slice_matrix(k) - state.sbar.slice_matrix(k)
}

fn refinement(state: &ModelState, p: &Problem) -> f64 {
    state.noise.fit.max(0.0) / p.gamma
}

/// `q(Ū)` for every slice.
pub fn update_u(state: &mut ModelState, p: &Problem) -> Result<()> {
    let tau_phi = state.noise.tau() / p.phi();
    let reg = refinement(state, p);
    let st = &*state;
    let out: Vec<(usize, (CMat, CMat))> = p
        .canonical()
        .into_par_iter()
        .map(|k| {
            let f = &st.factors.slices[k];
            let projected = linalg::mul(&residual(p, st, k), &f.v_mean);
            let post = factor_rows(projected, &f.vv(), &st.noise.lambda_mean(k), tau_phi, reg)?;
            Ok((k, post))
        })
        .collect::<Result<_>>()?;
    for (k, (mean, sigma)) in out {
        let f = &mut state.factors.slices[k];
        f.u_mean = mean;
        f.sigma_u = sigma;
    }
    p.sync_mirrors(&mut state.factors);
    Ok(())
}

/// `q(V̄)` for every slice.
pub fn update_v(state: &mut ModelState, p: &Problem) -> Result<()> {
    let tau_phi = state.noise.tau() / p.phi();
    let reg = refinement(state, p);
    let st = &*state;
    let out: Vec<(usize, (CMat, CMat))> = p
        .canonical()
        .into_par_iter()
        .map(|k| {
            let f = &st.factors.slices[k];
            let projected = linalg::adj_mul(&residual(p, st, k), &f.u_mean);
            let post = factor_rows(projected, &f.uu(), &st.noise.lambda_mean(k), tau_phi, reg)?;
            Ok((k, post))
        })
        .collect::<Result<_>>()?;
    for (k, (mean, sigma)) in out {
        let f = &mut state.factors.slices[k];
        f.v_mean = mean;
        f.sigma_v = sigma;
    }
    p.sync_mirrors(&mut state.factors);
    Ok(())
}

/// `q(λ)` for every slice and column.
pub fn update_lambda(state: &mut ModelState, p: &Problem) {
    let hp = &p.hp;
    let a = hp.a0_lambda + (p.y.rows() + p.y.cols()) as f64 / 2.0;
    for k in p.canonical() {
        let f = &state.factors.slices[k];
        let (uu, vv) = (f.uu(), f.vv());
        let r = f.rank();
        state.noise.lambda_a[k] = vec![a; r];
        state.noise.lambda_b[k] = (0..r).map(|j| hp.b0_lambda + 0.5 * (uu[(j, j)].re + vv[(j, j)].re)).collect();
    }
    p.sync_lambda(&mut state.noise);
}

/// `q(S)`: elementwise Gaussian around the residual `Y − X̂`. Refreshes
/// `S̄` afterwards and returns the `X̂` it used.
pub fn update_s(state: &mut ModelState, p: &Problem) -> Result<RealTensor> {
    let x_hat = super::reconstruct_x(state, p)?;
    let tau = state.noise.tau();
    let sp = &mut state.sparse;
    let (beta_a, beta_b) = (sp.beta_a.data(), sp.beta_b.data());
    let y = p.y.data();
    let x = x_hat.data();
    sp.s_mean
        .data_mut()
        .par_iter_mut()
        .zip(sp.s_var.data_mut().par_iter_mut())
        .enumerate()
        .for_each(|(i, (m, v))| {
            let var = 1.0 / (beta_a[i] / beta_b[i] + tau);
            *v = var;
            *m = tau * var * (y[i] - x[i]);
        });
    state.sbar = p.l.forward(&state.sparse.s_mean)?;
    Ok(x_hat)
}

/// `q(β)` for every entry.
pub fn update_beta(state: &mut ModelState, p: &Problem) {
    let hp = &p.hp;
    let sp = &mut state.sparse;
    sp.beta_a.data_mut().fill(hp.a0_beta + 0.5);
    let (m, v) = (sp.s_mean.data(), sp.s_var.data());
    sp.beta_b
        .data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, b)| *b = hp.b0_beta + 0.5 * (m[i] * m[i] + v[i]));
}

/// `⟨‖Ȳ − Ū△V̄† − S̄‖²_F⟩` under the current posteriors.
pub fn expected_residual(state: &ModelState, p: &Problem) -> f64 {
    let (i1, i2) = (p.y.rows() as f64, p.y.cols() as f64);
    // Conjugate slices contribute equally, so only canonical ones are visited.
    let per_slice: Vec<f64> = p
        .canonical()
        .into_par_iter()
        .map(|k| {
            let f = &state.factors.slices[k];
            let mut resid = residual(p, state, k);
            if f.rank() == 0 {
                return p.weight(k) * resid.norm_squared();
            }
            resid -= f.product();
            let vhv = linalg::adj_mul(&f.v_mean, &f.v_mean);
            let uhu = linalg::adj_mul(&f.u_mean, &f.u_mean);
            let e = resid.norm_squared()
                + i1 * i2 * (&f.sigma_v * &f.sigma_u).trace().re
                + i1 * (&f.sigma_u * vhv).trace().re
                + i2 * (&f.sigma_v * uhu).trace().re;
            p.weight(k) * e
        })
        .collect();
    let factor_part: f64 = per_slice.iter().sum();
    let var_part: f64 = state.sparse.s_var.data().iter().sum();
    factor_part + p.phi() * var_part
}

/// `q(τ)`. Returns the expected residual energy it used.
pub fn update_tau(state: &mut ModelState, p: &Problem) -> f64 {
    let e = expected_residual(state, p);
    state.noise.tau_a = p.hp.a0_tau + p.y.len() as f64 / 2.0;
    state.noise.tau_b = p.hp.b0_tau + e / (2.0 * p.phi());
    e
}

/// `1 − sqrt(E)/‖Ȳ‖_F`, stored in the state and returned.
pub fn compute_fit(state: &mut ModelState, p: &Problem) -> Result<f64> {
    let e = expected_residual(state, p);
    let fit = fit_from_energy(e, p)?;
    state.noise.fit = fit;
    Ok(fit)
}

pub(super) fn fit_from_energy(e: f64, p: &Problem) -> Result<f64> {
    if p.ybar_norm() == 0.0 {
        return Err(Error::DegenerateInput("the observation is identically zero".into()));
    }
    Ok(1.0 - e.max(0.0).sqrt() / p.ybar_norm())
}

/// Removes factor columns whose energy `(⟨Ū†Ū⟩ + ⟨V̄†V̄⟩)_rr / (I1 + I2)`
/// falls below `threshold` times the largest one in the same slice.
/// Returns whether anything was removed.
pub fn prune_columns(state: &mut ModelState, p: &Problem, threshold: f64) -> bool {
    let scale = (p.y.rows() + p.y.cols()) as f64;
    let mut changed = false;
    for k in p.canonical() {
        let f = &state.factors.slices[k];
        let r = f.rank();
        if r == 0 {
            continue;
        }
        let (uu, vv) = (f.uu(), f.vv());
        let energy: Vec<f64> = (0..r).map(|j| (uu[(j, j)].re + vv[(j, j)].re) / scale).collect();
        let max = energy.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = if max > 0.0 {
            (0..r).filter(|&j| energy[j] >= threshold * max).collect()
        } else {
            Vec::new()
        };
        if keep.len() == r {
            continue;
        }
        changed = true;
        let f = &mut state.factors.slices[k];
        f.u_mean = f.u_mean.select_columns(&keep);
        f.v_mean = f.v_mean.select_columns(&keep);
        f.sigma_u = f.sigma_u.select_rows(&keep).select_columns(&keep);
        f.sigma_v = f.sigma_v.select_rows(&keep).select_columns(&keep);
        let noise = &mut state.noise;
        noise.lambda_a[k] = keep.iter().map(|&j| noise.lambda_a[k][j]).collect();
        noise.lambda_b[k] = keep.iter().map(|&j| noise.lambda_b[k][j]).collect();
    }
    if changed {
        p.sync_mirrors(&mut state.factors);
        p.sync_lambda(&mut state.noise);
    }
    changed
}
