use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Dense row-major tensor of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(AutodiffError::InvalidShape(shape.to_vec()));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid tensor shape {shape:?}"
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Row-major matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Number of rows when viewed as `[rows, last_dim]`.
    pub fn outer_len(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, AutodiffError> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len != self.data.len() || shape.contains(&0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major. `accumulate` keeps the
/// existing contents of `c`.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slices are sized exactly m×k, k×n, m×n with row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m×n] (+)= a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: b is n×k row-major, read as its k×n transpose via swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m×n] (+)= a[k×m]ᵀ · b[k×n]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: a is k×m row-major, read as its m×k transpose via swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
