//! Order-d t-SVD algebra: face-wise product, t-product, conjugate transpose,
//! identity tensor, t-SVD, multi-rank and tubal rank, multi-rank truncation
//! and the two-factor split `X = U *_L V^†`.
//!
//! Everything defined through the transform domain works slice by slice on
//! `L(X)`; slices are independent and are processed in parallel.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{mirror_slice, ComplexTensor, DenseTensor, Element};
use crate::transform::{CMat, TransformSpec};

/// Relative singular-value cutoff used when counting slice ranks.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Per-slice ranks of `L(X)`, one entry per slice in linear slice order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiRank(pub Vec<usize>);

impl MultiRank {
    pub fn uniform(rank: usize, slices: usize) -> Self {
        Self(vec![rank; slices])
    }

    /// Largest entry (0 for an empty vector).
    pub fn tubal(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Economy SVD of one slice, singular values nonincreasing.
#[derive(Debug, Clone)]
pub struct SliceSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

impl SliceSvd {
    fn conj(&self) -> Self {
        Self {
            u: self.u.map(|z| z.conj()),
            s: self.s.clone(),
            v: self.v.map(|z| z.conj()),
        }
    }

    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > tol * smax).count()
    }

    /// `U[:, :r] diag(s[:r]) V[:, :r]^H`.
    pub fn truncated(&self, r: usize) -> CMat {
        let u = self.u.columns(0, r);
        let v = self.v.columns(0, r);
        let mut us = u.into_owned();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= Complex64::new(self.s[j], 0.0);
        }
        us * v.adjoint()
    }
}

/// Sorted economy SVD of a complex matrix.
pub fn slice_svd(m: &CMat) -> Result<SliceSvd> {
    let t = linalg::svd_complex(m)?;
    Ok(SliceSvd { u: t.u, s: t.s, v: t.v })
}

/// SVD of a real-valued matrix carried in complex storage; the factors come
/// out exactly real.
fn real_slice_svd(m: &CMat) -> Result<SliceSvd> {
    let t = linalg::svd_real(&m.map(|z| z.re))?;
    let lift = |x: DMatrix<f64>| x.map(|v| Complex64::new(v, 0.0));
    Ok(SliceSvd { u: lift(t.u), s: t.s, v: lift(t.v) })
}

/// SVDs of every slice of `xbar`. When `real_input` is set and the transform
/// pairs conjugate slices, only one slice of each pair is decomposed and the
/// partner receives the conjugate factors, so results map back to real
/// tensors exactly.
pub fn slice_svds(xbar: &ComplexTensor, l: &TransformSpec, real_input: bool) -> Result<Vec<SliceSvd>> {
    let j = xbar.num_slices();
    let partner: Vec<Option<usize>> = (0..j)
        .map(|k| if real_input { l.conjugate_partner(k) } else { None })
        .collect();
    let mut out: Vec<Option<SliceSvd>> = (0..j)
        .into_par_iter()
        .map(|k| match partner[k] {
            Some(p) if p == k => real_slice_svd(&xbar.slice_matrix(k)).map(Some),
            Some(p) if p < k => Ok(None),
            _ => slice_svd(&xbar.slice_matrix(k)).map(Some),
        })
        .collect::<Result<_>>()?;
    for k in 0..j {
        if out[k].is_none() {
            let p = partner[k].expect("only paired slices are skipped");
            out[k] = Some(out[p].as_ref().expect("partner computed").conj());
        }
    }
    Ok(out.into_iter().map(|s| s.expect("all slices filled")).collect())
}

/// `Z^(k) = X^(k) Y^(k)` for every slice `k`.
pub fn facewise_product<T: Element>(x: &DenseTensor<T>, y: &DenseTensor<T>) -> Result<DenseTensor<T>> {
    if x.trailing() != y.trailing() {
        return Err(Error::ShapeMismatch(format!(
            "trailing modes {:?} vs {:?}",
            x.trailing(),
            y.trailing()
        )));
    }
    if x.cols() != y.rows() {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions {} vs {}",
            x.cols(),
            y.rows()
        )));
    }
    let slices: Vec<DMatrix<T>> = (0..x.num_slices())
        .into_par_iter()
        .map(|k| x.slice_matrix(k) * y.slice_matrix(k))
        .collect();
    DenseTensor::from_slices(x.rows(), y.cols(), x.trailing(), &slices)
}

/// Slicewise conjugate transpose, used in the transform domain.
pub fn facewise_adjoint<T: Element>(x: &DenseTensor<T>) -> DenseTensor<T> {
    let slices: Vec<DMatrix<T>> = (0..x.num_slices()).map(|k| x.slice_matrix(k).adjoint()).collect();
    DenseTensor::from_slices(x.cols(), x.rows(), x.trailing(), &slices).expect("shape preserved")
}

/// `X *_L Y = L^{-1}(L(X) △ L(Y))`.
pub fn t_product<T: Element>(x: &DenseTensor<T>, y: &DenseTensor<T>, l: &TransformSpec) -> Result<ComplexTensor> {
    let z = facewise_product(&l.forward(x)?, &l.forward(y)?)?;
    l.inverse(&z)
}

/// Conjugate transpose computed in the original domain: conjugate-transpose
/// each slice, then reverse slices 2..I_k along every trailing mode. Under
/// the DFT this equals the slicewise conjugate transpose in the transform
/// domain.
pub fn conj_transpose<T: Element>(x: &DenseTensor<T>) -> DenseTensor<T> {
    let trailing = x.trailing().to_vec();
    let j = x.num_slices();
    let mut slices = vec![DMatrix::<T>::zeros(x.cols(), x.rows()); j];
    for (k, slot) in (0..j).map(|k| (k, mirror_slice(k, &trailing))) {
        slices[slot] = x.slice_matrix(k).adjoint();
    }
    DenseTensor::from_slices(x.cols(), x.rows(), &trailing, &slices).expect("shape preserved")
}

/// Tensor whose transform has the `n x n` identity on every slice.
pub fn identity_tensor(n: usize, l: &TransformSpec) -> Result<ComplexTensor> {
    let eye = CMat::identity(n, n);
    let slices = vec![eye; l.num_slices()];
    let bar = ComplexTensor::from_slices(n, n, l.dims(), &slices)?;
    l.inverse(&bar)
}

/// Factor widths for [`t_svd`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdWidth {
    /// `U: I_1 x I_1`, `S: I_1 x I_2`, `V: I_2 x I_2`.
    Full,
    /// Width `min(I_1, I_2)`.
    Economy,
    /// Width equal to the tubal rank; slices of lower rank are zero-padded in `S`.
    Skinny,
}

/// Result of [`t_svd`]; all three factors live in the original domain.
#[derive(Debug, Clone)]
pub struct TSvd {
    pub u: ComplexTensor,
    pub s: ComplexTensor,
    pub v: ComplexTensor,
    pub multirank: MultiRank,
}

impl TSvd {
    /// `U *_L S *_L V^†`.
    pub fn reconstruct(&self, l: &TransformSpec) -> Result<ComplexTensor> {
        let ubar = l.forward(&self.u)?;
        let sbar = l.forward(&self.s)?;
        let vbar = l.forward(&self.v)?;
        let us = facewise_product(&ubar, &sbar)?;
        l.inverse(&facewise_product(&us, &facewise_adjoint(&vbar))?)
    }
}

/// Extends orthonormal columns `u` (`n x m`) to an `n x n` unitary matrix.
fn complete_unitary(u: &CMat) -> CMat {
    let (n, m) = u.shape();
    if m >= n {
        return u.clone();
    }
    let mut a = CMat::zeros(n, m + n);
    a.columns_mut(0, m).copy_from(u);
    a.columns_mut(m, n).copy_from(&CMat::identity(n, n));
    let q = a.qr().q();
    let mut out = CMat::zeros(n, n);
    out.columns_mut(0, m).copy_from(u);
    out.columns_mut(m, n - m).copy_from(&q.columns(m, n - m));
    out
}

/// t-SVD `X = U *_L S *_L V^†`, computed as per-slice SVDs of `L(X)`.
pub fn t_svd<T: Element>(x: &DenseTensor<T>, l: &TransformSpec, width: SvdWidth) -> Result<TSvd> {
    let xbar = l.forward(x)?;
    let svds = slice_svds(&xbar, l, T::REAL)?;
    let (i1, i2) = (x.rows(), x.cols());
    let m = i1.min(i2);
    let multirank = MultiRank(svds.iter().map(|s| s.rank(DEFAULT_RANK_TOL)).collect());
    let (wu, wv) = match width {
        SvdWidth::Full => (i1, i2),
        SvdWidth::Economy => (m, m),
        SvdWidth::Skinny => (multirank.tubal(), multirank.tubal()),
    };
    let partner: Vec<Option<usize>> = (0..svds.len())
        .map(|k| if T::REAL { l.conjugate_partner(k) } else { None })
        .collect();

    let mut us = Vec::with_capacity(svds.len());
    let mut ss = Vec::with_capacity(svds.len());
    let mut vs = Vec::with_capacity(svds.len());
    for (k, svd) in svds.iter().enumerate() {
        if let Some(p) = partner[k].filter(|&p| p < k) {
            let u: &CMat = &us[p];
            let v: &CMat = &vs[p];
            let s: &CMat = &ss[p];
            let (u, s, v) = (u.map(|z| z.conj()), s.clone(), v.map(|z| z.conj()));
            us.push(u);
            ss.push(s);
            vs.push(v);
            continue;
        }
        let (u, v) = match width {
            SvdWidth::Full => (complete_unitary(&svd.u), complete_unitary(&svd.v)),
            SvdWidth::Economy => (svd.u.clone(), svd.v.clone()),
            SvdWidth::Skinny => (svd.u.columns(0, wu).into_owned(), svd.v.columns(0, wv).into_owned()),
        };
        let slice_rank = multirank.0[k];
        let mut s = CMat::zeros(wu, wv);
        for i in 0..wu.min(wv).min(svd.s.len()) {
            let keep = width != SvdWidth::Skinny || i < slice_rank;
            if keep {
                s[(i, i)] = Complex64::new(svd.s[i], 0.0);
            }
        }
        us.push(u);
        ss.push(s);
        vs.push(v);
    }
    let trailing = x.trailing();
    let ubar = ComplexTensor::from_slices(i1, wu, trailing, &us)?;
    let sbar = ComplexTensor::from_slices(wu, wv, trailing, &ss)?;
    let vbar = ComplexTensor::from_slices(i2, wv, trailing, &vs)?;
    Ok(TSvd {
        u: l.inverse(&ubar)?,
        s: l.inverse(&sbar)?,
        v: l.inverse(&vbar)?,
        multirank,
    })
}

/// Ranks of the transform-domain slices; slice `k` counts singular values
/// above `tol * sigma_max(k)`.
pub fn multi_rank<T: Element>(x: &DenseTensor<T>, l: &TransformSpec, tol: f64) -> Result<MultiRank> {
    if tol < 0.0 {
        return Err(Error::InvalidParameter(format!("rank tolerance {tol} < 0")));
    }
    let xbar = l.forward(x)?;
    let ranks = (0..xbar.num_slices())
        .into_par_iter()
        .map(|k| {
            let sv = linalg::singular_values(&xbar.slice_matrix(k))?;
            let smax = sv.first().copied().unwrap_or(0.0);
            Ok(if smax <= 0.0 { 0 } else { sv.iter().filter(|&&s| s > tol * smax).count() })
        })
        .collect::<Result<_>>()?;
    Ok(MultiRank(ranks))
}

pub fn tubal_rank<T: Element>(x: &DenseTensor<T>, l: &TransformSpec, tol: f64) -> Result<usize> {
    Ok(multi_rank(x, l, tol)?.tubal())
}

/// Keeps the leading `target[k]` singular triplets of every transform slice.
pub fn truncate_multi_rank<T: Element>(x: &DenseTensor<T>, l: &TransformSpec, target: &MultiRank) -> Result<ComplexTensor> {
    let limit = x.rows().min(x.cols());
    if target.len() != x.num_slices() {
        return Err(Error::ShapeMismatch(format!(
            "target multi-rank has {} entries, tensor has {} slices",
            target.len(),
            x.num_slices()
        )));
    }
    if let Some(&rank) = target.0.iter().find(|&&r| r > limit) {
        return Err(Error::RankTooLarge { rank, limit });
    }
    let xbar = l.forward(x)?;
    let svds = slice_svds(&xbar, l, T::REAL)?;
    let slices: Vec<CMat> = svds
        .par_iter()
        .zip(target.0.par_iter())
        .map(|(svd, &r)| svd.truncated(r))
        .collect();
    l.inverse(&ComplexTensor::from_slices(x.rows(), x.cols(), x.trailing(), &slices)?)
}

/// Splits a tensor of tubal rank at most `r` as `X = U *_L V^†` with
/// `U: I_1 x r`, `V: I_2 x r`, taking `U = U_0 S_0^{1/2}` and
/// `V = V_0 S_0^{1/2}` from the skinny t-SVD, slice by slice.
pub fn factorize_lemma1<T: Element>(x: &DenseTensor<T>, l: &TransformSpec, r: usize) -> Result<(ComplexTensor, ComplexTensor)> {
    let limit = x.rows().min(x.cols());
    if r > limit {
        return Err(Error::RankTooLarge { rank: r, limit });
    }
    let xbar = l.forward(x)?;
    let svds = slice_svds(&xbar, l, T::REAL)?;
    let tubal = svds.iter().map(|s| s.rank(DEFAULT_RANK_TOL)).max().unwrap_or(0);
    if tubal > r {
        return Err(Error::InvalidParameter(format!(
            "requested width {r} is below the tubal rank {tubal}"
        )));
    }
    let (us, vs): (Vec<CMat>, Vec<CMat>) = svds.iter().map(|svd| sqrt_split(svd, r)).unzip();
    let ubar = ComplexTensor::from_slices(x.rows(), r, x.trailing(), &us)?;
    let vbar = ComplexTensor::from_slices(x.cols(), r, x.trailing(), &vs)?;
    Ok((l.inverse(&ubar)?, l.inverse(&vbar)?))
}

/// `(U[:, :r] S^{1/2}, V[:, :r] S^{1/2})` for one slice.
pub fn sqrt_split(svd: &SliceSvd, r: usize) -> (CMat, CMat) {
    let mut u = svd.u.columns(0, r).into_owned();
    let mut v = svd.v.columns(0, r).into_owned();
    for j in 0..r {
        let w = svd.s[j].max(0.0).sqrt();
        u.column_mut(j).scale_mut(w);
        v.column_mut(j).scale_mut(w);
    }
    (u, v)
}
