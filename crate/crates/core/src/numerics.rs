//! Dense numeric kernels shared by the model, grounding and guidance code.
//!
//! Everything here is a pure function over immutable inputs. The kernels are
//! generic over [`Scalar`] so the same code runs in `f32` (the default
//! precision of the model and weight files) and in `f64` (used where exact
//! algebraic checks need more headroom than single precision offers).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type usable by every kernel in the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default tolerances used by invariant checks throughout the crate.
pub mod tol {
    /// Row sums of a softmax output.
    pub const SOFTMAX_ROW_SUM: f64 = 1e-6;
    /// Input mass below which sum normalization is declared degenerate.
    pub const NORM_EPS: f64 = 1e-12;
    /// Entries with magnitude above this count as live in an L0 fraction.
    pub const L0_EPS: f64 = 1e-12;
    /// Sum of a grounding vector.
    pub const GROUNDING_SUM: f64 = 1e-6;
}

/// Row-major dense matrix with explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Copies rows `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows {
            return Err(Error::Shape(format!(
                "row slice {start}..{end} out of range for {} rows",
                self.rows
            )));
        }
        Ok(Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    /// Copies columns `[start, end)` into a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.cols {
            return Err(Error::Shape(format!(
                "column slice {start}..{end} out of range for {} columns",
                self.cols
            )));
        }
        Ok(Self::from_fn(self.rows, end - start, |r, c| self.get(r, start + c)))
    }

    pub fn push_row(&mut self, row: &[T]) -> Result<()> {
        if self.rows > 0 && row.len() != self.cols {
            return Err(Error::Shape(format!(
                "row of length {} pushed onto {} columns",
                row.len(),
                self.cols
            )));
        }
        if self.rows == 0 {
            self.cols = row.len();
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Row vector times matrix: `x · self`.
    pub fn left_mul(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::Shape(format!(
                "vector of length {} times {}x{}",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for (k, &a) in x.iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(self.row(k)) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// Element-type conversion.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| cast(x)).collect(),
        }
    }
}

#[inline]
pub(crate) fn cast<T: Scalar, U: Scalar>(x: T) -> U {
    U::from(x).unwrap_or_else(U::nan)
}

pub fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn require_finite<T: Scalar>(xs: &[T], what: &str) -> Result<()> {
    if all_finite(xs) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains NaN or Inf")))
    }
}

/// Max-shifted softmax of a single row, written into `out`.
pub(crate) fn softmax_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Softmax of one vector, stabilized by its maximum.
pub fn softmax<T: Scalar>(row: &[T]) -> Result<Vec<T>> {
    require_finite(row, "softmax input")?;
    if row.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty row".into()));
    }
    let mut out = vec![T::zero(); row.len()];
    softmax_into(row, &mut out);
    Ok(out)
}

/// Softmax applied independently to every row.
pub fn row_softmax<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    require_finite(m.as_slice(), "row_softmax input")?;
    if m.cols() == 0 {
        return Err(Error::InvalidInput("row_softmax of zero-width rows".into()));
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        softmax_into(m.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Output of [`sum_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub values: Vec<T>,
    /// Input mass was below [`tol::NORM_EPS`]; `values` is uniform.
    pub degenerate: bool,
}

/// Scales a nonnegative vector to unit sum.
///
/// An input whose total is below [`tol::NORM_EPS`] yields the uniform vector
/// with `degenerate` set instead of an error, so that guidance suppressed to
/// nothing can still be carried forward.
pub fn sum_normalize<T: Scalar>(v: &[T]) -> Result<Normalized<T>> {
    require_finite(v, "sum_normalize input")?;
    if v.is_empty() {
        return Err(Error::InvalidInput("sum_normalize of an empty vector".into()));
    }
    if let Some(x) = v.iter().find(|x| **x < T::zero()) {
        return Err(Error::InvalidInput(format!(
            "sum_normalize requires nonnegative entries, found {x}"
        )));
    }
    let total: T = v.iter().copied().sum();
    if total < T::lit(tol::NORM_EPS) {
        let u = T::one() / T::lit(v.len() as f64);
        return Ok(Normalized {
            values: vec![u; v.len()],
            degenerate: true,
        });
    }
    Ok(Normalized {
        values: v.iter().map(|&x| x / total).collect(),
        degenerate: false,
    })
}

/// Cosine similarity clamped below at zero. A zero vector on either side
/// gives 0.
pub fn cosine_sim_clamped<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    require_finite(a, "cosine lhs")?;
    require_finite(b, "cosine rhs")?;
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return Ok(T::zero());
    }
    Ok((dot / (na * nb)).max(T::zero()).min(T::one()))
}

/// Fraction of entries whose magnitude exceeds `eps`; 0 for an empty vector.
pub fn l0_fraction<T: Scalar>(v: &[T], eps: T) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let live = v.iter().filter(|x| x.abs() > eps).count();
    T::lit(live as f64) / T::lit(v.len() as f64)
}

/// tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + T::lit(0.044715) * x * x * x)).tanh())
}

/// RMS normalization with per-channel gain.
pub fn rms_norm<T: Scalar>(x: &[T], gain: &[T], eps: T) -> Vec<T> {
    let ms = x.iter().map(|&v| v * v).sum::<T>() / T::lit(x.len() as f64);
    let inv = T::one() / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(&v, &g)| v * inv * g).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
