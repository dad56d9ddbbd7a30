//! Dense order-d tensors and the basic multilinear operations.
//!
//! Storage is column-major: the first index varies fastest, so the flat
//! offset of `(i_1, ..., i_d)` is `i_1 + I_1 (i_2 + I_2 (i_3 + ...))`.
//! A consequence the rest of the crate relies on: the mode-1/mode-2 slice
//! `X(:, :, i_3, ..., i_d)` is one contiguous run of `I_1 * I_2` values,
//! laid out exactly like a column-major `I_1 x I_2` matrix, and slices are
//! numbered with `i_3` fastest.
//!
//! Modes are 0-based throughout the API (mode 0 is the row mode).

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar types a tensor can hold: `f64` or `Complex64`.
pub trait Element: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    /// True for real scalars.
    const REAL: bool;

    fn to_c64(self) -> Complex64;
}

impl Element for f64 {
    const REAL: bool = true;

    #[inline]
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Element for Complex64 {
    const REAL: bool = false;

    #[inline]
    fn to_c64(self) -> Complex64 {
        self
    }
}

/// Dense order-d array, `d >= 3`, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type RealTensor = DenseTensor<f64>;
pub type ComplexTensor = DenseTensor<Complex64>;

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 3 {
        return Err(Error::OrderTooLow(shape.len()));
    }
    if shape.contains(&0) {
        return Err(Error::ShapeMismatch(format!("zero-sized mode in {shape:?}")));
    }
    Ok(())
}

impl<T: Element> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let numel = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![T::zero(); numel],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..numel {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    /// Assembles a tensor from its mode-1/mode-2 slices, given in linear
    /// slice order.
    pub fn from_slices(rows: usize, cols: usize, trailing: &[usize], slices: &[DMatrix<T>]) -> Result<Self> {
        let mut shape = vec![rows, cols];
        shape.extend_from_slice(trailing);
        check_shape(&shape)?;
        let count: usize = trailing.iter().product();
        if slices.len() != count {
            return Err(Error::ShapeMismatch(format!(
                "{} slices given, trailing shape {trailing:?} needs {count}",
                slices.len()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols * count);
        for m in slices {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "slice is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            data.extend_from_slice(m.as_slice());
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Sizes of modes 3..d.
    pub fn trailing(&self) -> &[usize] {
        &self.shape[2..]
    }

    /// Number of mode-1/mode-2 slices, `J = I_3 * ... * I_d`.
    pub fn num_slices(&self) -> usize {
        self.shape[2..].iter().product()
    }

    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::IndexOutOfRange(format!(
                "index {idx:?} has wrong arity for shape {:?}",
                self.shape
            )));
        }
        let mut off = 0;
        for (m, (&i, &n)) in idx.iter().zip(&self.shape).enumerate().rev() {
            if i >= n {
                return Err(Error::IndexOutOfRange(format!("index {i} on mode {m} of size {n}")));
            }
            off = off * n + i;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: T) -> Result<()> {
        let off = self.offset(idx)?;
        self.data[off] = value;
        Ok(())
    }

    /// Contiguous storage of slice `k` (column-major `I_1 x I_2`).
    pub fn slice_data(&self, k: usize) -> &[T] {
        let n = self.shape[0] * self.shape[1];
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_data_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.shape[0] * self.shape[1];
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Copy of the slice `X(:, :, i_3, ..., i_d)`.
    pub fn slice12(&self, index: &SliceIndex) -> Result<DMatrix<T>> {
        let k = index.linear(self.trailing())?;
        Ok(DMatrix::from_column_slice(self.shape[0], self.shape[1], self.slice_data(k)))
    }

    pub fn set_slice12(&mut self, index: &SliceIndex, m: &DMatrix<T>) -> Result<()> {
        let k = index.linear(self.trailing())?;
        if m.nrows() != self.shape[0] || m.ncols() != self.shape[1] {
            return Err(Error::ShapeMismatch(format!(
                "slice is {}x{}, tensor slices are {}x{}",
                m.nrows(),
                m.ncols(),
                self.shape[0],
                self.shape[1]
            )));
        }
        self.slice_data_mut(k).copy_from_slice(m.as_slice());
        Ok(())
    }

    /// Slice `k` as a matrix, `k` a linear slice index. Panics when out of range.
    pub fn slice_matrix(&self, k: usize) -> DMatrix<T> {
        DMatrix::from_column_slice(self.shape[0], self.shape[1], self.slice_data(k))
    }

    pub fn slices(&self) -> Vec<DMatrix<T>> {
        (0..self.num_slices()).map(|k| self.slice_matrix(k)).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.modulus_squared()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_complex(&self) -> ComplexTensor {
        self.map(T::to_c64)
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.frobenius_norm())
    }

    /// Relative Frobenius error `||self - reference|| / ||reference||`.
    pub fn relative_error(&self, reference: &Self) -> Result<f64> {
        let denom = reference.frobenius_norm();
        let num = self.distance(reference)?;
        if denom == 0.0 {
            return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
        }
        Ok(num / denom)
    }
}

impl ComplexTensor {
    /// Largest imaginary magnitude relative to the tensor's Frobenius norm.
    pub fn imaginary_residue(&self) -> f64 {
        let norm = self.frobenius_norm();
        let imag = self.data.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
        if norm == 0.0 {
            0.0
        } else {
            imag / norm
        }
    }

    /// Drops the imaginary part after checking it is below `tolerance`
    /// (relative to the Frobenius norm).
    pub fn into_real(self, tolerance: f64) -> Result<RealTensor> {
        let relative = self.imaginary_residue();
        if relative > tolerance {
            return Err(Error::ImaginaryResidue { relative, tolerance });
        }
        Ok(self.real_part())
    }

    pub fn real_part(&self) -> RealTensor {
        self.map(|v| v.re)
    }
}

/// Advances a column-major multi-index; wraps to all zeros after the last one.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// Identifies a mode-1/mode-2 slice either by its trailing multi-index
/// `(i_3, ..., i_d)` or by its linear position `j`, both 0-based.
///
/// The linear index is `j = i_3 + I_3 (i_4 + I_4 (... + I_{d-1} i_d))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SliceIndex {
    Linear(usize),
    Tuple(Vec<usize>),
}

impl SliceIndex {
    pub fn linear(&self, trailing: &[usize]) -> Result<usize> {
        match self {
            SliceIndex::Linear(j) => {
                let count: usize = trailing.iter().product();
                if *j >= count {
                    return Err(Error::IndexOutOfRange(format!("slice {j} of {count}")));
                }
                Ok(*j)
            }
            SliceIndex::Tuple(t) => slice_linear(t, trailing),
        }
    }

    pub fn tuple(&self, trailing: &[usize]) -> Result<Vec<usize>> {
        match self {
            SliceIndex::Linear(j) => slice_tuple(*j, trailing),
            SliceIndex::Tuple(t) => {
                slice_linear(t, trailing)?;
                Ok(t.clone())
            }
        }
    }
}

pub fn slice_linear(tuple: &[usize], trailing: &[usize]) -> Result<usize> {
    if tuple.len() != trailing.len() {
        return Err(Error::IndexOutOfRange(format!(
            "slice tuple {tuple:?} does not match trailing shape {trailing:?}"
        )));
    }
    let mut j = 0;
    for (&i, &n) in tuple.iter().zip(trailing).rev() {
        if i >= n {
            return Err(Error::IndexOutOfRange(format!("slice tuple {tuple:?} for {trailing:?}")));
        }
        j = j * n + i;
    }
    Ok(j)
}

pub fn slice_tuple(j: usize, trailing: &[usize]) -> Result<Vec<usize>> {
    let count: usize = trailing.iter().product();
    if j >= count {
        return Err(Error::IndexOutOfRange(format!("slice {j} of {count}")));
    }
    let mut rest = j;
    Ok(trailing
        .iter()
        .map(|&n| {
            let i = rest % n;
            rest /= n;
            i
        })
        .collect())
}

/// Slice whose trailing indices are negated modulo each mode size. Under the
/// DFT, slice `k` of a real tensor's transform is the conjugate of slice
/// `mirror_slice(k)`.
pub fn mirror_slice(k: usize, trailing: &[usize]) -> usize {
    let mut rest = k;
    let mut j = 0;
    let mut stride = 1;
    for &n in trailing {
        let i = rest % n;
        rest /= n;
        j += ((n - i) % n) * stride;
        stride *= n;
    }
    j
}

/// Mode-`n` unfolding, `I_n x prod_{i != n} I_i`. Column `c` enumerates the
/// remaining indices in column-major order (lowest remaining mode fastest).
pub fn unfold<T: Element>(x: &DenseTensor<T>, n: usize) -> Result<DMatrix<T>> {
    let d = x.order();
    if n >= d {
        return Err(Error::InvalidMode { mode: n, order: d });
    }
    let shape = x.shape();
    let inner: usize = shape[..n].iter().product();
    let len = shape[n];
    let outer: usize = shape[n + 1..].iter().product();
    let mut m = DMatrix::zeros(len, inner * outer);
    for o in 0..outer {
        for t in 0..len {
            let src = &x.data()[(o * len + t) * inner..(o * len + t + 1) * inner];
            for (i, &v) in src.iter().enumerate() {
                m[(t, o * inner + i)] = v;
            }
        }
    }
    Ok(m)
}

/// Inverse of [`unfold`] for a tensor of the given shape.
pub fn fold<T: Element>(m: &DMatrix<T>, n: usize, shape: &[usize]) -> Result<DenseTensor<T>> {
    check_shape(shape)?;
    let d = shape.len();
    if n >= d {
        return Err(Error::InvalidMode { mode: n, order: d });
    }
    let inner: usize = shape[..n].iter().product();
    let len = shape[n];
    let outer: usize = shape[n + 1..].iter().product();
    if m.nrows() != len || m.ncols() != inner * outer {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix cannot fold into {shape:?} along mode {n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![T::zero(); len * inner * outer];
    for o in 0..outer {
        for t in 0..len {
            for i in 0..inner {
                data[(o * len + t) * inner + i] = m[(t, o * inner + i)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// `x ×_n u`: every mode-`n` fiber is multiplied by `u`; mode `n` takes the
/// size `rows(u)`.
pub fn mode_n_product<T: Element>(x: &DenseTensor<T>, u: &DMatrix<T>, n: usize) -> Result<DenseTensor<T>> {
    let d = x.order();
    if n >= d {
        return Err(Error::InvalidMode { mode: n, order: d });
    }
    let shape = x.shape();
    if u.ncols() != shape[n] {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} columns, mode {n} has size {}",
            u.ncols(),
            shape[n]
        )));
    }
    let inner: usize = shape[..n].iter().product();
    let len = shape[n];
    let out_len = u.nrows();
    let outer: usize = shape[n + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[n] = out_len;
    let mut out = vec![T::zero(); inner * out_len * outer];
    for o in 0..outer {
        let src = &x.data()[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for t in 0..len {
            let fiber_row = &src[t * inner..(t + 1) * inner];
            for r in 0..out_len {
                let a = u[(r, t)];
                if a == T::zero() {
                    continue;
                }
                let row = &mut dst[r * inner..(r + 1) * inner];
                for (acc, &v) in row.iter_mut().zip(fiber_row) {
                    *acc += a * v;
                }
            }
        }
    }
    DenseTensor::new(out_shape, out)
}

/// `bdiag(X) = diag(X^1, ..., X^J)`; dense, intended for small oracle checks.
pub fn bdiag<T: Element>(x: &DenseTensor<T>) -> DMatrix<T> {
    let (r, c, j) = (x.rows(), x.cols(), x.num_slices());
    let mut m = DMatrix::zeros(r * j, c * j);
    for k in 0..j {
        m.view_mut((k * r, k * c), (r, c)).copy_from(&x.slice_matrix(k));
    }
    m
}
