//! Dense SVD and complex products bridged to faer. nalgebra matrices stay
//! the working type; faer sees them through zero-copy views.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::transform::CMat;

fn view(a: &CMat) -> MatRef<'_, Complex64> {
    MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols())
}

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `a b`.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions");
    let mut out = CMat::zeros(a.nrows(), b.ncols());
    if a.ncols() > 0 {
        let (m, n) = out.shape();
        let dst = MatMut::from_column_major_slice_mut(out.as_mut_slice(), m, n);
        matmul(dst, Accum::Replace, view(a), view(b), ONE, Par::Seq);
    }
    out
}

/// `a b^H`.
pub fn mul_adj(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.ncols(), "inner dimensions");
    let mut out = CMat::zeros(a.nrows(), b.nrows());
    if a.ncols() > 0 {
        let (m, n) = out.shape();
        let dst = MatMut::from_column_major_slice_mut(out.as_mut_slice(), m, n);
        matmul(dst, Accum::Replace, view(a), view(b).adjoint(), ONE, Par::Seq);
    }
    out
}

/// `a^H b`.
pub fn adj_mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.nrows(), b.nrows(), "inner dimensions");
    let mut out = CMat::zeros(a.ncols(), b.ncols());
    if a.nrows() > 0 {
        let (m, n) = out.shape();
        let dst = MatMut::from_column_major_slice_mut(out.as_mut_slice(), m, n);
        matmul(dst, Accum::Replace, view(a).adjoint(), view(b), ONE, Par::Seq);
    }
    out
}

/// Thin SVD `A = U diag(s) V^H` with `s` nonincreasing.
pub struct Thin<T> {
    pub u: DMatrix<T>,
    pub s: Vec<f64>,
    pub v: DMatrix<T>,
}

fn sorted<T: nalgebra::Scalar>(u: DMatrix<T>, s: Vec<f64>, v: DMatrix<T>) -> Thin<T> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return Thin { u, s, v };
    }
    Thin {
        u: u.select_columns(&order),
        s: order.iter().map(|&i| s[i]).collect(),
        v: v.select_columns(&order),
    }
}

pub fn svd_complex(a: &DMatrix<Complex64>) -> Result<Thin<Complex64>> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Thin { u: DMatrix::zeros(m, 0), s: Vec::new(), v: DMatrix::zeros(n, 0) });
    }
    let f = Mat::<Complex64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::NumericalBreakdown(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let u = DMatrix::from_fn(m, k, |i, j| fu[(i, j)]);
    let v = DMatrix::from_fn(n, k, |i, j| fv[(i, j)]);
    let s = (0..k).map(|i| fs[i].re).collect();
    Ok(sorted(u, s, v))
}

pub fn svd_real(a: &DMatrix<f64>) -> Result<Thin<f64>> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Thin { u: DMatrix::zeros(m, 0), s: Vec::new(), v: DMatrix::zeros(n, 0) });
    }
    let f = Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::NumericalBreakdown(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let u = DMatrix::from_fn(m, k, |i, j| fu[(i, j)]);
    let v = DMatrix::from_fn(n, k, |i, j| fv[(i, j)]);
    let s = (0..k).map(|i| fs[i]).collect();
    Ok(sorted(u, s, v))
}

/// Singular values, nonincreasing.
pub fn singular_values(a: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if m.min(n) == 0 {
        return Ok(Vec::new());
    }
    let f = Mat::<Complex64>::from_fn(m, n, |i, j| a[(i, j)]);
    let mut s = f
        .singular_values()
        .map_err(|e| Error::NumericalBreakdown(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}
