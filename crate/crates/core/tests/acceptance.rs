//! Acceptance suite. Criteria run one after another inside a single test so
//! that wall-clock limits are not distorted by concurrently running tests.
//! Every criterion prints one PASS/FAIL line; the test fails if any does.

use std::f64::consts::TAU;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use lmh_brtf::corrupt::{corrupt, normalize, CorruptConfig};
use lmh_brtf::metrics::psnr;
use lmh_brtf::model::{self, ModelState, Problem};
use lmh_brtf::synth::{run_benchmark, synth_hyper, Benchmark, PatternKind, SynthConfig};
use lmh_brtf::tsvd::{conj_transpose, facewise_product, identity_tensor, t_product, t_svd};
use lmh_brtf::{ComplexTensor, DenseTensor, HyperParams, InitRank, RealTensor, RunOutput, SvdWidth, TransformSpec};

type CMat = DMatrix<Complex64>;

// Pinned tolerances and limits.
const ROUND_TRIP_TOL: f64 = 1e-12;
const ROUND_TRIP_SECS: f64 = 5.0;
const ALGEBRA_TOL: f64 = 1e-12;
const ALGEBRA_SECS: f64 = 10.0;
const TSVD_TOL: f64 = 1e-10;
const X_ERR_LOW_NOISE: f64 = 1e-3;
const X_ERR_HIGH_NOISE: f64 = 3e-2;
const ORDER3_CELL_SECS: f64 = 180.0;
const HIGH_ORDER_CELL_SECS: f64 = 600.0;
const STATIONARY_TOL: f64 = 1e-6;
const STATIONARY_SECS: f64 = 60.0;
const MC_SAMPLES: usize = 1_000_000;
const MC_SIGMAS: f64 = 3.0;
const PSNR_TOL: f64 = 1e-9;
const OBSERVED_PSNR: (f64, f64) = (11.0, 20.0);
const DENOISE_GAIN_DB: f64 = 10.0;
const DENOISE_SECS: f64 = 300.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// Writes through the stdout handle, which the test harness does not capture.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cnormal(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(normal(rng), normal(rng)) * std::f64::consts::FRAC_1_SQRT_2
}

fn random_real(shape: &[usize], rng: &mut ChaCha8Rng) -> RealTensor {
    let n = shape.iter().product();
    RealTensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect()).unwrap()
}

fn random_complex(shape: &[usize], rng: &mut ChaCha8Rng) -> ComplexTensor {
    let n = shape.iter().product();
    ComplexTensor::new(shape.to_vec(), (0..n).map(|_| cnormal(rng)).collect()).unwrap()
}

fn random_cmat(r: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(r, cols, |_, _| cnormal(rng))
}

/// Scaled unitary (or real orthogonal) matrix from the QR of a random one.
fn random_scaled_unitary(n: usize, real: bool, rng: &mut ChaCha8Rng) -> CMat {
    let g = if real { CMat::from_fn(n, n, |_, _| c(normal(rng))) } else { random_cmat(n, n, rng) };
    let scale = rng.random_range(0.5..2.0);
    g.qr().q() * c(scale)
}

fn own_dft(n: usize) -> CMat {
    CMat::from_fn(n, n, |k, m| Complex64::from_polar(1.0, -TAU * ((k * m) % n) as f64 / n as f64))
}

fn rel(diff: f64, reference: f64) -> f64 {
    diff / reference.max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Oracles for the t-algebra: a direct sum over the trailing indices and an
// explicitly assembled block-diagonal matrix.

fn multi_index(mut j: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&n| {
            let i = j % n;
            j /= n;
            i
        })
        .collect()
}

fn oracle_forward<T: lmh_brtf::Element>(x: &DenseTensor<T>, mats: &[CMat]) -> ComplexTensor {
    let dims = x.trailing().to_vec();
    let j: usize = dims.iter().product();
    let (r, cols) = (x.rows(), x.cols());
    let slices: Vec<CMat> = (0..j)
        .map(|k| {
            let kt = multi_index(k, &dims);
            let mut acc = CMat::zeros(r, cols);
            for m in 0..j {
                let mt = multi_index(m, &dims);
                let w: Complex64 = (0..dims.len()).map(|t| mats[t][(kt[t], mt[t])]).product();
                acc += x.slice_matrix(m).map(|v| v.to_c64()) * w;
            }
            acc
        })
        .collect();
    ComplexTensor::from_slices(r, cols, &dims, &slices).unwrap()
}

fn oracle_bdiag(x: &ComplexTensor) -> CMat {
    let (r, cols, j) = (x.rows(), x.cols(), x.num_slices());
    let mut out = CMat::zeros(r * j, cols * j);
    for k in 0..j {
        out.view_mut((k * r, k * cols), (r, cols)).copy_from(&x.slice_matrix(k));
    }
    out
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let order = 3 + case % 3;
        let shape: Vec<usize> = (0..order).map(|_| rng.random_range(1..=20)).collect();
        let x = random_real(&shape, &mut rng);
        let trailing = &shape[2..];
        let l = match case % 4 {
            3 => TransformSpec::explicit(trailing.iter().map(|&n| random_scaled_unitary(n, case % 8 == 3, &mut rng)).collect())
                .unwrap(),
            _ => TransformSpec::dft(trailing).unwrap(),
        };
        let back = l.inverse(&l.forward(&x).unwrap()).unwrap();
        let err = rel(back.distance(&x.to_complex()).unwrap(), x.frobenius_norm());
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= ROUND_TRIP_TOL && secs < ROUND_TRIP_SECS,
        format!("worst relative error {worst:.2e} (tol {ROUND_TRIP_TOL:.0e}), {secs:.2}s (limit {ROUND_TRIP_SECS}s)"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    let layouts: [&[usize]; 9] = [&[16], &[7], &[1], &[4, 4], &[2, 8], &[3, 5], &[2, 2, 4], &[3, 2, 2], &[1, 3, 2]];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for round in 0..6 {
        for (li, dims) in layouts.iter().enumerate() {
            let dft = (round + li) % 2 == 0;
            let mats: Vec<CMat> = if dft {
                dims.iter().map(|&n| own_dft(n)).collect()
            } else {
                dims.iter().map(|&n| random_scaled_unitary(n, round % 4 == 1, &mut rng)).collect()
            };
            let l = if dft { TransformSpec::dft(dims).unwrap() } else { TransformSpec::explicit(mats.clone()).unwrap() };
            let (n1, n2, n3) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=5));
            let shape = |a: usize, b: usize| [&[a, b][..], dims].concat();
            let mut check = |got: &CMat, want: &CMat| {
                worst = worst.max(rel((got - want).norm(), want.norm()));
            };

            // t-product, real and complex operands.
            let a = random_real(&shape(n1, n2), &mut rng);
            let b = random_real(&shape(n2, n3), &mut rng);
            let prod = t_product(&a, &b, &l).unwrap();
            let want = oracle_bdiag(&oracle_forward(&a, &mats)) * oracle_bdiag(&oracle_forward(&b, &mats));
            check(&oracle_bdiag(&oracle_forward(&prod, &mats)), &want);
            check(&lmh_brtf::tensor::bdiag(&l.forward(&prod).unwrap()), &want);
            let ac = random_complex(&shape(n1, n2), &mut rng);
            let bc = random_complex(&shape(n2, n3), &mut rng);
            let prod = t_product(&ac, &bc, &l).unwrap();
            let want = oracle_bdiag(&oracle_forward(&ac, &mats)) * oracle_bdiag(&oracle_forward(&bc, &mats));
            check(&oracle_bdiag(&oracle_forward(&prod, &mats)), &want);

            // Face-wise product needs no transform.
            let fw = facewise_product(&ac, &bc).unwrap();
            check(&oracle_bdiag(&fw), &(oracle_bdiag(&ac) * oracle_bdiag(&bc)));

            // Conjugate transpose in the original domain is a DFT identity.
            if dft {
                let at = conj_transpose(&ac);
                check(&oracle_bdiag(&oracle_forward(&at, &mats)), &oracle_bdiag(&oracle_forward(&ac, &mats)).adjoint());
                let at = conj_transpose(&a);
                check(&oracle_bdiag(&oracle_forward(&at, &mats)), &oracle_bdiag(&oracle_forward(&a, &mats)).adjoint());
            }

            // Identity laws.
            let j: usize = dims.iter().product();
            let eye1 = identity_tensor(n1, &l).unwrap();
            let eye2 = identity_tensor(n2, &l).unwrap();
            check(&oracle_bdiag(&oracle_forward(&eye1, &mats)), &CMat::identity(n1 * j, n1 * j));
            let acx = ac.clone();
            check(&oracle_bdiag(&t_product(&eye1, &acx, &l).unwrap()), &oracle_bdiag(&acx));
            check(&oracle_bdiag(&t_product(&acx, &eye2, &l).unwrap()), &oracle_bdiag(&acx));
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= ALGEBRA_TOL && secs < ALGEBRA_SECS,
        format!("{cases} cases, worst relative deviation {worst:.2e} (tol {ALGEBRA_TOL:.0e}), {secs:.2}s (limit {ALGEBRA_SECS}s)"),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut recon, mut ortho, mut order, mut mean_id, mut offdiag): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for case in 0..50 {
        let ord = 3 + case % 3;
        let mut shape = vec![rng.random_range(1..=8), rng.random_range(1..=8)];
        shape.extend((2..ord).map(|_| rng.random_range(1..=4)));
        let l = TransformSpec::dft(&shape[2..]).unwrap();
        let x = if case % 5 == 4 {
            // Low tubal rank through a thin t-product.
            let r = rng.random_range(1..=2);
            let a = random_real(&[&[shape[0], r][..], &shape[2..]].concat(), &mut rng);
            let b = random_real(&[&[r, shape[1]][..], &shape[2..]].concat(), &mut rng);
            t_product(&a, &b, &l).unwrap().real_part()
        } else {
            random_real(&shape, &mut rng)
        };
        let width = [SvdWidth::Full, SvdWidth::Economy, SvdWidth::Skinny][case % 3];
        let svd = t_svd(&x, &l, width).unwrap();
        recon = recon.max(rel(svd.reconstruct(&l).unwrap().distance(&x.to_complex()).unwrap(), x.frobenius_norm()));

        for (factor, full) in [(&svd.u, width == SvdWidth::Full), (&svd.v, width == SvdWidth::Full)] {
            let bar = l.forward(factor).unwrap();
            for k in 0..bar.num_slices() {
                let m = bar.slice_matrix(k);
                let w = m.ncols();
                ortho = ortho.max((m.adjoint() * &m - CMat::identity(w, w)).camax());
                if full {
                    ortho = ortho.max((&m * m.adjoint() - CMat::identity(m.nrows(), m.nrows())).camax());
                }
            }
        }

        let s = &svd.s;
        let sbar = l.forward(s).unwrap();
        let phi = l.phi();
        let first = s.slice_matrix(0);
        let diag: Vec<Complex64> = (0..first.nrows().min(first.ncols())).map(|i| first[(i, i)]).collect();
        let scale = diag.first().map(|z| z.norm()).unwrap_or(0.0).max(1.0);
        for i in 0..diag.len() {
            // Real, nonnegative and nonincreasing along the diagonal.
            order = order.max(diag[i].im.abs() / scale).max((-diag[i].re).max(0.0) / scale);
            if i + 1 < diag.len() {
                order = order.max((diag[i + 1].re - diag[i].re).max(0.0) / scale);
            }
            let mean: Complex64 = (0..sbar.num_slices()).map(|k| sbar.slice_matrix(k)[(i, i)]).sum::<Complex64>() / phi;
            mean_id = mean_id.max((mean - diag[i]).norm() / scale);
        }
        for k in 0..s.num_slices() {
            let m = s.slice_matrix(k);
            for (i, j) in (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))) {
                if i != j {
                    offdiag = offdiag.max(m[(i, j)].norm() / scale);
                }
            }
        }
    }
    let pass = [recon, ortho, order, mean_id, offdiag].iter().all(|&v| v <= TSVD_TOL);
    verdict(
        pass,
        format!(
            "50 cases: reconstruction {recon:.1e}, orthogonality {ortho:.1e}, ordering {order:.1e}, \
             slice-mean identity {mean_id:.1e}, off-diagonal {offdiag:.1e} (tol {TSVD_TOL:.0e})"
        ),
    )
}

// ---------------------------------------------------------------------------
// Synthetic grids.

const RHOS: [f64; 3] = [0.05, 0.1, 0.2];
const SIGMAS: [f64; 2] = [1e-4, 1e-1];
const GRID_SEED: u64 = 7;

fn grid(shape: &[usize], kinds: &[PatternKind]) -> Vec<SynthConfig> {
    let mut out = Vec::new();
    for &kind in kinds {
        for rho in RHOS {
            for sigma in SIGMAS {
                out.push(SynthConfig::with_kind(shape.to_vec(), 5, kind, rho, sigma, GRID_SEED));
            }
        }
    }
    out
}

fn run_grid(shape: &[usize], kinds: &[PatternKind]) -> Benchmark {
    let l = TransformSpec::dft(&shape[2..]).unwrap();
    run_benchmark(&grid(shape, kinds), &synth_hyper(shape), &l).unwrap()
}

/// Scores every cell; returns whether all pass and prints a line per cell.
fn score_grid(bench: &Benchmark, kinds: &[PatternKind], cell_secs: f64) -> (bool, usize) {
    let mut ok = true;
    for (i, cell) in bench.cells.iter().enumerate() {
        let cfg = cell.entry.synth.as_ref().unwrap();
        let r_err = cell.entry.r_err.unwrap();
        let x_err = cell.entry.x_err.unwrap();
        let bound = if cfg.sigma_sq <= 1e-4 { X_ERR_LOW_NOISE } else { X_ERR_HIGH_NOISE };
        let cell_ok = r_err == 0.0 && x_err <= bound && cell.seconds < cell_secs;
        ok &= cell_ok;
        say(&format!(
            "    {:?} {:?} rho={} sigma2={}: R_err={} X_err={:.3e} (<= {:.0e}) iters={} {:.1}s{}",
            cfg.shape,
            kinds[i / (RHOS.len() * SIGMAS.len())],
            cfg.rho,
            cfg.sigma_sq,
            r_err,
            x_err,
            bound,
            cell.entry.trace.iterations.len(),
            cell.seconds,
            if cell_ok { "" } else { "  <-- fails" }
        ));
    }
    (ok, bench.cells.len())
}

const ORDER3: [usize; 3] = [50, 50, 50];
const ORDER4: [usize; 4] = [50, 50, 5, 5];
const ORDER5: [usize; 5] = [50, 50, 3, 3, 3];
const BOTH: [PatternKind; 2] = [PatternKind::Blocks, PatternKind::BlocksSwapped];

fn criterion_4(store: &mut Store) -> Verdict {
    let kinds = [PatternKind::Blocks];
    let bench = run_grid(&ORDER3, &kinds);
    let (ok, n) = score_grid(&bench, &kinds, ORDER3_CELL_SECS);
    store.c4 = Some(bench);
    verdict(ok, format!("{n} cells at 50x50x50, R=5: R_err = 0, X_err bounds {X_ERR_LOW_NOISE:.0e}/{X_ERR_HIGH_NOISE:.0e}, < {ORDER3_CELL_SECS}s per cell"))
}

fn criterion_5(store: &mut Store) -> Verdict {
    let mut ok = true;
    let mut n = 0;
    let mut benches = Vec::new();
    for shape in [&ORDER4[..], &ORDER5[..]] {
        let bench = run_grid(shape, &BOTH);
        let (o, m) = score_grid(&bench, &BOTH, HIGH_ORDER_CELL_SECS);
        ok &= o;
        n += m;
        benches.push(bench);
    }
    store.c5 = Some(benches);
    verdict(ok, format!("{n} cells at 50x50x5x5 and 50x50x3x3x3, both patterns: R_err = 0, X_err bounds met, < {HIGH_ORDER_CELL_SECS}s per cell"))
}

// ---------------------------------------------------------------------------
// Coordinate objectives. Each is the part of the variational lower bound
// that depends on one block, written from the model definition.

fn ln_det_hpd(m: &CMat) -> f64 {
    let sym = (m + m.adjoint()) * c(0.5);
    match Cholesky::new(sym) {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|z| z.re.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    }
}

/// `E[W^H W]` for Gaussian rows with common covariance.
fn second_moment(mean: &CMat, sigma: &CMat) -> CMat {
    sigma * c(mean.nrows() as f64) + mean.adjoint() * mean
}

/// Objective of one factor `W` in `R ≈ W O^H` with `O` held fixed:
/// `-(τ/2φ) E‖R - W O^H‖² - (reg/2) Σ λ_r E[w_r^H w_r] + (rows/2) ln det Σ`.
#[allow(clippy::too_many_arguments)]
fn factor_objective(r: &CMat, mean: &CMat, sigma: &CMat, other_mean: &CMat, other_gram: &CMat, lambda: &[f64], tau_phi: f64, reg: f64) -> f64 {
    let ww = second_moment(mean, sigma);
    let cross = (r.adjoint() * mean * other_mean.adjoint()).trace().re;
    let energy = r.norm_squared() - 2.0 * cross + (&ww * other_gram).trace().re;
    let penalty: f64 = lambda.iter().enumerate().map(|(j, lam)| lam * ww[(j, j)].re).sum();
    -0.5 * tau_phi * energy - 0.5 * reg * penalty + 0.5 * mean.nrows() as f64 * ln_det_hpd(sigma)
}

/// Expected log-density terms plus entropy of a Gamma(a, b) factor whose
/// optimal shape and rate are `shape_coef + 1` and `rate_coef`.
fn gamma_objective(shape_coef: f64, rate_coef: f64, a: f64, b: f64) -> f64 {
    let psi = digamma(a);
    shape_coef * (psi - b.ln()) - rate_coef * a / b + a - b.ln() + ln_gamma(a) + (1.0 - a) * psi
}

/// Fourth-order central difference of `f` at `x`.
fn derivative(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

struct Probe {
    /// `|F'(0)| / |F''|`: the Newton step to the optimum along the probe, in
    /// units of the probe length.
    step: f64,
    /// Strictly negative curvature and no higher value at the neighbours.
    maximal: bool,
}

/// Probes `t -> F(θ + t d)` around the candidate optimum `t = 0`. The
/// curvature comes from slopes at `±DISPLACEMENT`, so a point that is off
/// the optimum by that much would report a step of about `DISPLACEMENT`.
fn probe(f: impl Fn(f64) -> f64) -> Probe {
    const H: f64 = 1e-2;
    const DISPLACEMENT: f64 = 0.05;
    let g0 = derivative(&f, 0.0, H);
    let curvature = (derivative(&f, DISPLACEMENT, H) - derivative(&f, -DISPLACEMENT, H)) / (2.0 * DISPLACEMENT);
    let f0 = f(0.0);
    let slack = 1e-13 * f0.abs().max(1.0);
    let maximal = curvature < 0.0 && f(H) <= f0 + slack && f(-H) <= f0 + slack;
    Probe { step: g0.abs() / curvature.abs(), maximal }
}

/// Hermitian direction `L G L^H` with `Σ = L L^H` and `‖G‖_F = 1`, which
/// keeps `Σ + t H` positive definite for `|t| < 1`.
fn covariance_direction(sigma: &CMat, rng: &mut ChaCha8Rng) -> CMat {
    let n = sigma.nrows();
    let l = Cholesky::new((sigma + sigma.adjoint()) * c(0.5)).unwrap().l();
    let b = random_cmat(n, n, rng);
    let g = (&b + b.adjoint()) * c(0.5);
    let g = &g * c(1.0 / g.norm().max(1e-300));
    &l * g * l.adjoint()
}

fn matrix_direction(like: &CMat, rng: &mut ChaCha8Rng) -> CMat {
    let d = random_cmat(like.nrows(), like.ncols(), rng);
    let s = like.norm().max(1e-3) / d.norm().max(1e-300);
    d * c(s)
}

struct Tally {
    worst: f64,
    worst_block: &'static str,
    not_max: usize,
    checks: usize,
}

impl Tally {
    fn add(&mut self, block: &'static str, p: Probe) {
        if p.step.is_nan() || p.step > self.worst {
            self.worst = p.step;
            self.worst_block = block;
        }
        self.not_max += usize::from(!p.maximal);
        self.checks += 1;
    }
}

fn residual_slices(st: &ModelState, p: &Problem) -> Vec<CMat> {
    let sbar = p.l.forward(&st.sparse.s_mean).unwrap();
    (0..p.num_slices()).map(|k| p.ybar.slice_matrix(k) - sbar.slice_matrix(k)).collect()
}

/// `E‖Ȳ - Ū△V̄^H - L(S)‖²` over every slice, through the generic identity
/// `E‖R - U V^H‖² = ‖R‖² - 2 Re tr(R^H E[U] E[V]^H) + tr(E[U^H U] E[V^H V])`.
fn own_expected_residual(st: &ModelState, p: &Problem) -> f64 {
    let res = residual_slices(st, p);
    let mut total = 0.0;
    for (k, r) in res.iter().enumerate() {
        let f = &st.factors.slices[k];
        if f.u_mean.ncols() == 0 {
            total += r.norm_squared();
            continue;
        }
        let cross = (r.adjoint() * &f.u_mean * f.v_mean.adjoint()).trace().re;
        let uu = second_moment(&f.u_mean, &f.sigma_u);
        let vv = second_moment(&f.v_mean, &f.sigma_v);
        total += r.norm_squared() - 2.0 * cross + (uu * vv).trace().re;
    }
    total + p.phi() * st.sparse.s_var.data().iter().sum::<f64>()
}

fn check_updates(y: &RealTensor, l: &TransformSpec, rank: usize, seed: u64, t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hp = HyperParams {
        sigma0_sq: 0.5,
        gamma: Some(1.0),
        max_iter: 3,
        init_rank: Some(InitRank::Uniform(rank)),
        prune_threshold: 0.0,
        ..HyperParams::default()
    };
    let p = Problem::new(y, l, &hp).unwrap();
    let st = model::init_state(&p, seed).unwrap();
    let (_, mut st) = model::run_state(&p, st).unwrap();
    // Fit/γ = 1 makes the ARD weight inside the covariances exactly λ.
    st.noise.fit = 1.0;
    let reg = 1.0;
    let canonical = p.canonical();

    model::update_u(&mut st, &p).unwrap();
    let tau_phi = st.noise.tau() / p.phi();
    let res = residual_slices(&st, &p);
    for &k in &canonical {
        let f = &st.factors.slices[k];
        let gram = second_moment(&f.v_mean, &f.sigma_v);
        let lam = st.noise.lambda_mean(k);
        let obj = |m: &CMat, s: &CMat| factor_objective(&res[k], m, s, &f.v_mean, &gram, &lam, tau_phi, reg);
        for _ in 0..3 {
            let dm = matrix_direction(&f.u_mean, &mut rng);
            let ds = covariance_direction(&f.sigma_u, &mut rng);
            t.add("U", probe(|h| obj(&(&f.u_mean + &dm * c(h)), &f.sigma_u)));
            t.add("U", probe(|h| obj(&f.u_mean, &(&f.sigma_u + &ds * c(h)))));
        }
    }

    model::update_v(&mut st, &p).unwrap();
    for &k in &canonical {
        let f = &st.factors.slices[k];
        let gram = second_moment(&f.u_mean, &f.sigma_u);
        let lam = st.noise.lambda_mean(k);
        let rh = res[k].adjoint();
        let obj = |m: &CMat, s: &CMat| factor_objective(&rh, m, s, &f.u_mean, &gram, &lam, tau_phi, reg);
        for _ in 0..3 {
            let dm = matrix_direction(&f.v_mean, &mut rng);
            let ds = covariance_direction(&f.sigma_v, &mut rng);
            t.add("V", probe(|h| obj(&(&f.v_mean + &dm * c(h)), &f.sigma_v)));
            t.add("V", probe(|h| obj(&f.v_mean, &(&f.sigma_v + &ds * c(h)))));
        }
    }

    model::update_lambda(&mut st, &p);
    let (i1, i2) = (y.rows() as f64, y.cols() as f64);
    for &k in &canonical {
        let f = &st.factors.slices[k];
        let (uu, vv) = (second_moment(&f.u_mean, &f.sigma_u), second_moment(&f.v_mean, &f.sigma_v));
        for j in 0..f.rank() {
            let shape_coef = hp.a0_lambda - 1.0 + (i1 + i2) / 2.0;
            let rate_coef = hp.b0_lambda + 0.5 * (uu[(j, j)].re + vv[(j, j)].re);
            let (a, b) = (st.noise.lambda_a[k][j], st.noise.lambda_b[k][j]);
            for (da, db) in [(1.0, 0.0), (0.0, 1.0), (0.7, -0.4)] {
                t.add("lambda", probe(|h| gamma_objective(shape_coef, rate_coef, a * (h * da).exp(), b * (h * db).exp())));
            }
        }
    }

    model::update_s(&mut st, &p).unwrap();
    let x_hat = model::reconstruct_x(&st, &p).unwrap();
    let tau = st.noise.tau();
    let n = y.len();
    let (m0, v0) = (st.sparse.s_mean.data().to_vec(), st.sparse.s_var.data().to_vec());
    let beta: Vec<f64> = (0..n).map(|i| st.sparse.beta_mean(i)).collect();
    let s_obj = |m: &[f64], v: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let d = y.data()[i] - x_hat.data()[i] - m[i];
                -0.5 * tau * (d * d + v[i]) - 0.5 * beta[i] * (m[i] * m[i] + v[i]) + 0.5 * v[i].ln()
            })
            .sum()
    };
    let m_scale = m0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3) / (n as f64).sqrt();
    for _ in 0..3 {
        let dm: Vec<f64> = (0..n).map(|_| normal(&mut rng) * m_scale).collect();
        let dv: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let shift = |h: f64| m0.iter().zip(&dm).map(|(a, b)| a + h * b).collect::<Vec<_>>();
        let grow = |h: f64| v0.iter().zip(&dv).map(|(a, b)| a * (h * b).exp()).collect::<Vec<_>>();
        t.add("S", probe(|h| s_obj(&shift(h), &v0)));
        t.add("S", probe(|h| s_obj(&m0, &grow(h))));
    }

    model::update_beta(&mut st, &p);
    let sp = &st.sparse;
    let (ba, bb) = (sp.beta_a.data().to_vec(), sp.beta_b.data().to_vec());
    let b_obj = |sa: &[f64], sb: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let (m, v) = (sp.s_mean.data()[i], sp.s_var.data()[i]);
                gamma_objective(hp.a0_beta - 0.5, hp.b0_beta + 0.5 * (m * m + v), sa[i], sb[i])
            })
            .sum()
    };
    for _ in 0..3 {
        let da: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let db: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let scale = |base: &[f64], d: &[f64], h: f64| base.iter().zip(d).map(|(a, b)| a * (h * b).exp()).collect::<Vec<_>>();
        t.add("beta", probe(|h| b_obj(&scale(&ba, &da, h), &scale(&bb, &db, h))));
    }

    model::update_tau(&mut st, &p);
    let shape_coef = hp.a0_tau - 1.0 + n as f64 / 2.0;
    let rate_coef = hp.b0_tau + own_expected_residual(&st, &p) / (2.0 * p.phi());
    let (a, b) = (st.noise.tau_a, st.noise.tau_b);
    for (da, db) in [(1.0, 0.0), (0.0, 1.0), (-0.6, 0.8)] {
        t.add("tau", probe(|h| gamma_objective(shape_coef, rate_coef, a * (h * da).exp(), b * (h * db).exp())));
    }
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut t = Tally { worst: 0.0, worst_block: "", not_max: 0, checks: 0 };
    let y = random_real(&[5, 4, 3], &mut rng);
    check_updates(&y, &TransformSpec::dft(&[3]).unwrap(), 3, 1, &mut t);
    let y = random_real(&[4, 3, 2, 2], &mut rng);
    check_updates(&y, &TransformSpec::dft(&[2, 2]).unwrap(), 2, 2, &mut t);
    let y = random_real(&[4, 4, 3], &mut rng);
    let l = TransformSpec::explicit(vec![random_scaled_unitary(3, true, &mut rng)]).unwrap();
    check_updates(&y, &l, 3, 3, &mut t);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        t.worst <= STATIONARY_TOL && t.not_max == 0 && secs < STATIONARY_SECS,
        format!(
            "{} directional probes: largest relative Newton step {:.1e} ({}; tol {STATIONARY_TOL:.0e}), \
             {} not strict maxima, {secs:.1}s",
            t.checks, t.worst, t.worst_block, t.not_max
        ),
    )
}

// ---------------------------------------------------------------------------

fn random_hpd(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let b = random_cmat(n, n, rng);
    &b * b.adjoint() * c(0.5 / n as f64) + CMat::identity(n, n) * c(0.3)
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let y = random_real(&[3, 3, 2], &mut rng);
    let l = TransformSpec::dft(&[2]).unwrap();
    let hp = HyperParams { gamma: Some(1.0), max_iter: 2, init_rank: Some(InitRank::Uniform(2)), ..HyperParams::default() };
    let p = Problem::new(&y, &l, &hp).unwrap();
    let st = model::init_state(&p, 5).unwrap();
    let (_, mut st) = model::run_state(&p, st).unwrap();
    // Spread the posteriors so every covariance term carries weight.
    for f in &mut st.factors.slices {
        f.sigma_u = random_hpd(f.rank(), &mut rng);
        f.sigma_v = random_hpd(f.rank(), &mut rng);
    }
    for v in st.sparse.s_var.data_mut() {
        *v = rng.random_range(0.1..0.6);
    }
    for v in st.sparse.s_mean.data_mut() {
        *v = normal(&mut rng);
    }
    st.sbar = l.forward(&st.sparse.s_mean).unwrap();
    let expansion = model::expected_residual(&st, &p);

    let chol: Vec<(CMat, CMat)> = st
        .factors
        .slices
        .iter()
        .map(|f| (Cholesky::new(f.sigma_u.clone()).unwrap().l(), Cholesky::new(f.sigma_v.clone()).unwrap().l()))
        .collect();
    let sd: Vec<f64> = st.sparse.s_var.data().iter().map(|v| v.sqrt()).collect();
    let (mut mean, mut m2) = (0.0, 0.0);
    let mut s = st.sparse.s_mean.clone();
    for i in 0..MC_SAMPLES {
        for (v, (m, d)) in s.data_mut().iter_mut().zip(st.sparse.s_mean.data().iter().zip(&sd)) {
            *v = m + d * normal(&mut rng);
        }
        let sbar = l.forward(&s).unwrap();
        let mut val = 0.0;
        for (k, f) in st.factors.slices.iter().enumerate() {
            let r = f.rank();
            let u = &f.u_mean + random_cmat(3, r, &mut rng) * chol[k].0.adjoint();
            let v = &f.v_mean + random_cmat(3, r, &mut rng) * chol[k].1.adjoint();
            val += (p.ybar.slice_matrix(k) - u * v.adjoint() - sbar.slice_matrix(k)).norm_squared();
        }
        let delta = val - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (val - mean);
    }
    let se = (m2 / (MC_SAMPLES - 1) as f64).sqrt() / (MC_SAMPLES as f64).sqrt();
    let z = (expansion - mean) / se;
    // Dropping the cross-covariance term must be detectable at this sample size.
    let cross: f64 = st.factors.slices.iter().map(|f| 9.0 * (&f.sigma_v * &f.sigma_u).trace().re).sum();
    verdict(
        z.abs() <= MC_SIGMAS && cross > MC_SIGMAS * se,
        format!(
            "expansion {expansion:.6}, Monte-Carlo {mean:.6} +/- {se:.2e} over {MC_SAMPLES} samples, z = {z:.2} \
             (limit {MC_SIGMAS}); smallest covariance term {cross:.3} = {:.0} SE",
            cross / se
        ),
    )
}

// ---------------------------------------------------------------------------

/// 60x60 frames, three colour channels, ten frames: a shaded background, a
/// drifting stripe texture and a moving bright blob, on the 0..255 scale.
fn video_like() -> RealTensor {
    let gain = [1.0, 0.8, 0.6];
    RealTensor::from_fn(vec![60, 60, 3, 10], |i| {
        let (r, col, ch, t) = (i[0] as f64, i[1] as f64, i[2], i[3] as f64);
        let bg = 90.0 + 50.0 * (r / 60.0) + 30.0 * (TAU * col / 60.0).cos();
        let stripe = 20.0 * (TAU * (r + col + 3.0 * t) / 20.0).sin();
        let (cr, cc) = (20.0 + 2.0 * t, 25.0 + 1.5 * t);
        let blob = 90.0 * (-((r - cr).powi(2) + (col - cc).powi(2)) / 60.0).exp();
        (gain[ch] * (bg + stripe) + blob).clamp(0.0, 255.0)
    })
    .unwrap()
}

fn video_corruption() -> CorruptConfig {
    CorruptConfig { rho: 0.2, sigma_sq: 1e-4, low: 0.0, high: 255.0, normalize: true, seed: 11 }
}

fn criterion_8() -> Verdict {
    let gt = RealTensor::new(vec![1, 1, 4], vec![1.0; 4]).unwrap();
    let mut est = gt.clone();
    est.data_mut()[2] = 1.1;
    let got = psnr(&est, &gt).unwrap();
    let hand = 10.0 * (4.0f64 * 1.0 / 0.01).log10();
    let formula_err = (got - hand).abs();

    let clean = video_like();
    let y = corrupt(&clean, &video_corruption()).unwrap();
    let observed = psnr(&y, &normalize(&clean, 0.0, 255.0)).unwrap();
    let (lo, hi) = OBSERVED_PSNR;
    verdict(
        formula_err <= PSNR_TOL && (lo..=hi).contains(&observed),
        format!("hand case {got:.10} dB vs {hand:.10} dB (|diff| {formula_err:.1e}, tol {PSNR_TOL:.0e}); corrupted input {observed:.3} dB (range [{lo}, {hi}])"),
    )
}

fn denoise_video() -> (RunOutput, f64, f64, f64) {
    let clean = video_like();
    let gt = normalize(&clean, 0.0, 255.0);
    let y = corrupt(&clean, &video_corruption()).unwrap();
    let l = TransformSpec::dft(&[3, 10]).unwrap();
    let hp = HyperParams {
        sigma0_sq: 1e-7,
        tol: 1e-4,
        max_iter: 200,
        gamma: None,
        init_rank: Some(InitRank::Uniform(30)),
        ..HyperParams::default()
    };
    let start = Instant::now();
    let out = model::run(&y, &l, &hp, 11).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let observed = psnr(&y, &gt).unwrap();
    let recovered = psnr(&out.x_hat, &gt).unwrap();
    (out, observed, recovered, secs)
}

fn criterion_9(store: &mut Store) -> Verdict {
    let (out, observed, recovered, secs) = denoise_video();
    let gain = recovered - observed;
    let iters = out.trace.iterations.len();
    store.c9 = Some(out);
    verdict(
        gain >= DENOISE_GAIN_DB && secs < DENOISE_SECS,
        format!(
            "60x60x3x10 video-like tensor: observed {observed:.2} dB, recovered {recovered:.2} dB, gain {gain:.2} dB \
             (>= {DENOISE_GAIN_DB}), {iters} iterations, {secs:.1}s (limit {DENOISE_SECS}s)"
        ),
    )
}

fn same_bits(a: &RealTensor, b: &RealTensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_bench(a: &Benchmark, b: &Benchmark) -> bool {
    a.report.without_timing() == b.report.without_timing()
        && a.cells.len() == b.cells.len()
        && a.cells.iter().zip(&b.cells).all(|(x, y)| {
            same_bits(&x.instance.y, &y.instance.y)
                && same_bits(&x.output.x_hat, &y.output.x_hat)
                && same_bits(&x.output.s_hat, &y.output.s_hat)
        })
}

fn criterion_10(store: &Store) -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    match &store.c4 {
        Some(first) => {
            let same = same_bench(first, &run_grid(&ORDER3, &[PatternKind::Blocks]));
            ok &= same;
            parts.push(format!("criterion 4 {}", if same { "identical" } else { "differs" }));
        }
        None => {
            ok = false;
            parts.push("criterion 4 produced nothing to compare".into());
        }
    }
    match &store.c5 {
        Some(first) => {
            let again = [run_grid(&ORDER4, &BOTH), run_grid(&ORDER5, &BOTH)];
            let same = first.iter().zip(&again).all(|(a, b)| same_bench(a, b));
            ok &= same;
            parts.push(format!("criterion 5 {}", if same { "identical" } else { "differs" }));
        }
        None => {
            ok = false;
            parts.push("criterion 5 produced nothing to compare".into());
        }
    }
    match &store.c9 {
        Some(first) => {
            let (again, ..) = denoise_video();
            let same = same_bits(&first.x_hat, &again.x_hat)
                && same_bits(&first.s_hat, &again.s_hat)
                && first.trace == again.trace
                && first.multirank == again.multirank;
            ok &= same;
            parts.push(format!("criterion 9 {}", if same { "identical" } else { "differs" }));
        }
        None => {
            ok = false;
            parts.push("criterion 9 produced nothing to compare".into());
        }
    }
    verdict(ok, format!("reruns with the same seeds: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------

#[derive(Default)]
struct Store {
    c4: Option<Benchmark>,
    c5: Option<Vec<Benchmark>>,
    c9: Option<RunOutput>,
}

#[test]
fn acceptance_criteria() {
    // A comma list of criterion numbers restricts the run while iterating;
    // skipped criteria are reported as such, never as passing.
    let only: Option<Vec<u32>> = std::env::var("LMH_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut store = Store::default();
    let mut results = Vec::new();
    let mut run = |id: u32, name: &str, f: &mut dyn FnMut(&mut Store) -> Verdict| {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            say(&format!("criterion {id:>2} ({name}): SKIPPED (LMH_ACCEPTANCE_ONLY)"));
            return;
        }
        say(&format!("criterion {id:>2} ({name}): running"));
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&mut store))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            verdict(false, format!("panicked: {msg}"))
        });
        let status = if v.pass { "PASS" } else { "FAIL" };
        say(&format!("criterion {id:>2} ({name}): {status}: {} [{:.1}s]", v.detail, start.elapsed().as_secs_f64()));
        results.push((id, v.pass));
    };
    run(1, "transform round trip", &mut |_| criterion_1());
    run(2, "t-algebra oracle", &mut |_| criterion_2());
    run(3, "t-SVD contract", &mut |_| criterion_3());
    run(4, "order-3 synthetic grid", &mut criterion_4);
    run(5, "order-4/5 synthetic grids", &mut criterion_5);
    run(6, "update optimality", &mut |_| criterion_6());
    run(7, "tau expansion Monte-Carlo", &mut |_| criterion_7());
    run(8, "PSNR formula and corruption", &mut |_| criterion_8());
    run(9, "video-like denoising", &mut criterion_9);
    run(10, "determinism", &mut |s| criterion_10(s));
    let failed: Vec<u32> = results.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    say(&format!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
