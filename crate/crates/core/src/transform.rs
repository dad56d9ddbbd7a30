//! The invertible linear transform applied along modes 3..d.
//!
//! `L(X) = X ×_3 M_3 ×_4 M_4 ... ×_d M_d`. The built-in transform is the
//! unnormalized DFT (forward carries no scaling, the inverse carries `1/n`
//! per mode), computed with FFTs. Explicit transforms are accepted when every
//! matrix is a scaled unitary, `M^H M = c I`, so that the energy constant
//! `phi` with `||L(X)||_F^2 = phi ||X||_F^2` exists.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{mirror_slice, mode_n_product, ComplexTensor, DenseTensor, Element, RealTensor};

pub type CMat = DMatrix<Complex64>;

/// Imaginary residue (relative Frobenius) tolerated when a transform-domain
/// result is mapped back to a real original-domain tensor.
pub const REAL_RESIDUE_TOL: f64 = 1e-8;

const MIN_RCOND: f64 = 1e-10;
const UNITARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Dft,
    Explicit,
}

#[derive(Clone)]
struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

#[derive(Clone)]
enum Backend {
    Fft(Vec<FftPair>),
    Matrices { forward: Vec<CMat>, inverse: Vec<CMat> },
}

/// An invertible transform over the trailing modes together with its
/// energy constant `phi`.
#[derive(Clone)]
pub struct TransformSpec {
    kind: TransformKind,
    dims: Vec<usize>,
    phi: f64,
    real_matrices: bool,
    backend: Backend,
}

impl fmt::Debug for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformSpec")
            .field("kind", &self.kind)
            .field("dims", &self.dims)
            .field("phi", &self.phi)
            .finish()
    }
}

/// Serializable description of a transform, used in run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformEcho {
    pub kind: TransformKind,
    pub dims: Vec<usize>,
    pub phi: f64,
}

/// Unnormalized DFT matrix, `W[a, b] = exp(-2 pi i a b / n)`.
pub fn dft_matrix(n: usize) -> CMat {
    CMat::from_fn(n, n, |a, b| {
        let angle = -2.0 * PI * ((a * b) % n) as f64 / n as f64;
        Complex64::from_polar(1.0, angle)
    })
}

impl TransformSpec {
    /// Unnormalized DFT along every trailing mode; `phi = I_3 * ... * I_d`.
    pub fn dft(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("trailing dims {dims:?}")));
        }
        let mut planner = FftPlanner::<f64>::new();
        let pairs = dims
            .iter()
            .map(|&n| FftPair {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
            .collect();
        Ok(Self {
            kind: TransformKind::Dft,
            dims: dims.to_vec(),
            phi: dims.iter().product::<usize>() as f64,
            real_matrices: false,
            backend: Backend::Fft(pairs),
        })
    }

    /// Explicit per-mode matrices, one square matrix per trailing mode.
    /// Each must be invertible and a scaled unitary.
    pub fn explicit(matrices: Vec<CMat>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidParameter("explicit transform needs at least one matrix".into()));
        }
        let mut dims = Vec::with_capacity(matrices.len());
        let mut inverses = Vec::with_capacity(matrices.len());
        let mut phi = 1.0;
        for (i, m) in matrices.iter().enumerate() {
            let mode = i + 2;
            if m.nrows() != m.ncols() || m.nrows() == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "transform matrix for mode {mode} is {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let n = m.nrows();
            let sv = crate::linalg::singular_values(m)?;
            let smax = sv[0];
            let smin = sv[n - 1];
            let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
            if rcond < MIN_RCOND {
                return Err(Error::SingularTransform { mode, rcond });
            }
            let gram = m.adjoint() * m;
            let c = gram.trace().re / n as f64;
            let dev = (&gram - CMat::identity(n, n) * Complex64::new(c, 0.0)).camax();
            if dev > UNITARY_TOL * c {
                return Err(Error::NotScaledUnitary { mode });
            }
            let inv = m
                .clone()
                .try_inverse()
                .ok_or(Error::SingularTransform { mode, rcond })?;
            phi *= c;
            dims.push(n);
            inverses.push(inv);
        }
        let real_matrices = matrices.iter().all(|m| m.iter().all(|v| v.im == 0.0));
        Ok(Self {
            kind: TransformKind::Explicit,
            dims,
            phi,
            real_matrices,
            backend: Backend::Matrices {
                forward: matrices,
                inverse: inverses,
            },
        })
    }

    /// Identity matrices on every trailing mode (`phi = 1`).
    pub fn identity(dims: &[usize]) -> Result<Self> {
        Self::explicit(dims.iter().map(|&n| CMat::identity(n, n)).collect())
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_slices(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn echo(&self) -> TransformEcho {
        TransformEcho {
            kind: self.kind,
            dims: self.dims.clone(),
            phi: self.phi,
        }
    }

    /// The transform matrix of trailing mode `i` (mode `i + 2` of the tensor).
    pub fn matrix(&self, i: usize) -> CMat {
        match &self.backend {
            Backend::Fft(_) => dft_matrix(self.dims[i]),
            Backend::Matrices { forward, .. } => forward[i].clone(),
        }
    }

    /// For a real original-domain tensor, transform slice `k` is the complex
    /// conjugate of slice `conjugate_partner(k)`. `None` when the transform
    /// gives no such guarantee.
    pub fn conjugate_partner(&self, k: usize) -> Option<usize> {
        match self.kind {
            TransformKind::Dft => Some(mirror_slice(k, &self.dims)),
            TransformKind::Explicit if self.real_matrices => Some(k),
            TransformKind::Explicit => None,
        }
    }

    fn check_shape<T: Element>(&self, x: &DenseTensor<T>) -> Result<()> {
        if x.trailing() != self.dims.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "tensor trailing modes {:?} do not match transform dims {:?}",
                x.trailing(),
                self.dims
            )));
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, x: &DenseTensor<T>) -> Result<ComplexTensor> {
        self.check_shape(x)?;
        let mut out = x.to_complex();
        match &self.backend {
            Backend::Fft(pairs) => {
                for (i, p) in pairs.iter().enumerate() {
                    fft_along(&mut out, i + 2, p.forward.as_ref(), 1.0);
                }
            }
            Backend::Matrices { forward, .. } => {
                for (i, m) in forward.iter().enumerate() {
                    out = mode_n_product(&out, m, i + 2)?;
                }
            }
        }
        Ok(out)
    }

    pub fn inverse<T: Element>(&self, xbar: &DenseTensor<T>) -> Result<ComplexTensor> {
        self.check_shape(xbar)?;
        let mut out = xbar.to_complex();
        match &self.backend {
            Backend::Fft(pairs) => {
                for (i, p) in pairs.iter().enumerate().rev() {
                    let n = self.dims[i] as f64;
                    fft_along(&mut out, i + 2, p.inverse.as_ref(), 1.0 / n);
                }
            }
            Backend::Matrices { inverse, .. } => {
                for (i, m) in inverse.iter().enumerate().rev() {
                    out = mode_n_product(&out, m, i + 2)?;
                }
            }
        }
        Ok(out)
    }

    /// Inverse transform of a tensor known to map back to the real domain;
    /// the imaginary residue is checked against [`REAL_RESIDUE_TOL`].
    pub fn inverse_real(&self, xbar: &ComplexTensor) -> Result<RealTensor> {
        self.inverse(xbar)?.into_real(REAL_RESIDUE_TOL)
    }
}

/// Fibers gathered per FFT batch; keeps the working set cache-sized.
const FIBER_BATCH: usize = 64;

/// In-place FFT of every fiber along `mode`, results scaled by `scale`.
fn fft_along(x: &mut ComplexTensor, mode: usize, fft: &dyn Fft<f64>, scale: f64) {
    let shape = x.shape().to_vec();
    let inner: usize = shape[..mode].iter().product();
    let len = shape[mode];
    let outer: usize = shape[mode + 1..].iter().product();
    if len == 1 {
        return;
    }
    let data = x.data_mut();
    let batch = FIBER_BATCH.min(inner);
    let mut buf = vec![Complex64::new(0.0, 0.0); len * batch];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for o in 0..outer {
        let block = &mut data[o * len * inner..(o + 1) * len * inner];
        for start in (0..inner).step_by(batch) {
            let width = batch.min(inner - start);
            let buf = &mut buf[..width * len];
            for t in 0..len {
                let row = &block[t * inner + start..t * inner + start + width];
                for (i, v) in row.iter().enumerate() {
                    buf[i * len + t] = *v;
                }
            }
            fft.process_with_scratch(buf, &mut scratch);
            for t in 0..len {
                let row = &mut block[t * inner + start..t * inner + start + width];
                for (i, v) in row.iter_mut().enumerate() {
                    *v = buf[i * len + t] * scale;
                }
            }
        }
    }
}
