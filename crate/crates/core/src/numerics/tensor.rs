//! Dense row-major containers: a rank-4 tensor and a matrix.

use crate::error::{Error, Result};
use crate::numerics::scalar::Scalar;

/// Row-major rank-4 tensor with axes (batch, maps, electrodes, samples).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<S> {
    dims: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    /// Zero-filled tensor; all dims must be ≥ 1 (programmer contract).
    pub fn zeros(dims: [usize; 4]) -> Self {
        debug_assert!(dims.iter().all(|&d| d >= 1), "zero-sized dim {dims:?}");
        let len = dims.iter().product();
        Tensor4 {
            dims,
            data: vec![S::zero(); len],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<S>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dim(format!("tensor dims must be >= 1, got {dims:?}")));
        }
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::Dim(format!(
                "tensor data length {} does not match dims {:?} (want {})",
                data.len(),
                dims,
                want
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, m: usize, c: usize, t: usize) -> usize {
        debug_assert!(n < self.dims[0] && m < self.dims[1] && c < self.dims[2] && t < self.dims[3]);
        ((n * self.dims[1] + m) * self.dims[2] + c) * self.dims[3] + t
    }

    #[inline]
    pub fn at(&self, n: usize, m: usize, c: usize, t: usize) -> S {
        self.data[self.offset(n, m, c, t)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, m: usize, c: usize, t: usize, v: S) {
        let i = self.offset(n, m, c, t);
        self.data[i] = v;
    }

    /// Contiguous (maps * electrodes * samples) block of one batch item.
    pub fn trial(&self, n: usize) -> &[S] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn trial_mut(&mut self, n: usize) -> &mut [S] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Contiguous sample row at (batch, map, electrode).
    pub fn row(&self, n: usize, m: usize, c: usize) -> &[S] {
        let start = self.offset(n, m, c, 0);
        &self.data[start..start + self.dims[3]]
    }

    pub fn row_mut(&mut self, n: usize, m: usize, c: usize) -> &mut [S] {
        let start = self.offset(n, m, c, 0);
        let t = self.dims[3];
        &mut self.data[start..start + t]
    }

    /// Reinterprets (b, maps, C, T) as a (b, maps*C*T) matrix without copying.
    pub fn into_mat(self) -> Mat<S> {
        let rows = self.dims[0];
        let cols = self.dims[1] * self.dims[2] * self.dims[3];
        Mat {
            rows,
            cols,
            data: self.data,
        }
    }

    pub fn convert<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{what}: element {i} is {v}")));
            }
        }
        Ok(())
    }
}

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        debug_assert!(rows >= 1 && cols >= 1, "zero-sized matrix {rows}x{cols}");
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dim(format!(
                "matrix dims must be >= 1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dim(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reinterprets (rows, cols) as (rows, 1, 1, cols) without copying.
    pub fn into_tensor4_rows(self) -> Tensor4<S> {
        Tensor4 {
            dims: [self.rows, 1, 1, self.cols],
            data: self.data,
        }
    }

    pub fn convert<T: Scalar>(&self) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn transposed(&self) -> Mat<S> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{what}: element {i} is {v}")));
            }
        }
        Ok(())
    }
}
