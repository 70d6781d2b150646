//! Dense row-major matrices and the few kernels the networks need.
//!
//! All kernels accumulate in a fixed order, so results are reproducible
//! bit for bit and each output row depends only on the matching input row.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Single column built from a slice.
    pub fn column(values: &[f64]) -> Self {
        Matrix::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Matrix::from_vec(1, 1, vec![value])
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of column `j`.
    pub fn col_values(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "zip_map shape");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

/// `a * b` for `a: n x k`, `b: k x m`.
///
/// Every output entry is accumulated over the inner index in ascending
/// order, so a row of the result does not depend on the other rows.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    const R: usize = 4;
    const C: usize = 8;
    let full_cols = m - m % C;
    let mut i = 0;
    while i < n {
        let rows = R.min(n - i);
        if rows == R {
            let mut j = 0;
            while j < full_cols {
                let mut acc = [[0.0f64; C]; R];
                for p in 0..k {
                    let bv: &[f64; C] = b.data[p * m + j..p * m + j + C].try_into().unwrap();
                    for (r, accr) in acc.iter_mut().enumerate() {
                        let av = a.data[(i + r) * k + p];
                        for c in 0..C {
                            accr[c] += av * bv[c];
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    out.data[(i + r) * m + j..(i + r) * m + j + C].copy_from_slice(accr);
                }
                j += C;
            }
        }
        let col_start = if rows == R { full_cols } else { 0 };
        if col_start < m {
            for r in 0..rows {
                let orow = &mut out.data[(i + r) * m + col_start..(i + r + 1) * m];
                for p in 0..k {
                    let av = a.data[(i + r) * k + p];
                    let br = &b.data[p * m + col_start..(p + 1) * m];
                    for (o, bv) in orow.iter_mut().zip(br) {
                        *o += av * bv;
                    }
                }
            }
        }
        i += rows;
    }
    out
}

/// `aᵀ * g` for `a: n x k`, `g: n x m`, accumulated over rows in index order.
pub fn matmul_tn(a: &Matrix, g: &Matrix) -> Matrix {
    assert_eq!(a.rows, g.rows, "matmul_tn row count");
    let (n, k, m) = (a.rows, a.cols, g.cols);
    let mut out = Matrix::zeros(k, m);
    const R: usize = 4;
    const C: usize = 8;
    let full_cols = m - m % C;
    let mut p = 0;
    while p < k {
        let rows = R.min(k - p);
        if rows == R {
            let mut j = 0;
            while j < full_cols {
                let mut acc = [[0.0f64; C]; R];
                for i in 0..n {
                    let gv: &[f64; C] = g.data[i * m + j..i * m + j + C].try_into().unwrap();
                    let av: &[f64; R] = a.data[i * k + p..i * k + p + R].try_into().unwrap();
                    for r in 0..R {
                        for c in 0..C {
                            acc[r][c] += av[r] * gv[c];
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    out.data[(p + r) * m + j..(p + r) * m + j + C].copy_from_slice(accr);
                }
                j += C;
            }
        }
        let col_start = if rows == R { full_cols } else { 0 };
        if col_start < m {
            for i in 0..n {
                let grow = &g.data[i * m + col_start..(i + 1) * m];
                for r in 0..rows {
                    let av = a.data[i * k + p + r];
                    let orow = &mut out.data[(p + r) * m + col_start..(p + r + 1) * m];
                    for (o, gv) in orow.iter_mut().zip(grow) {
                        *o += av * gv;
                    }
                }
            }
        }
        p += rows;
    }
    out
}

/// `g * bᵀ` for `g: n x m`, `b: k x m`.
pub fn matmul_nt(g: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(g.cols, b.cols, "matmul_nt inner dimension");
    matmul(g, &b.transpose())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape { context: "cholesky", expected: n, found: a.cols });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for p in 0..j {
            d -= l.get(j, p) * l.get(j, p);
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Degenerate("matrix is not positive definite"));
        }
        let djj = math::sqrt(d);
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l.get(i, p) * y[p];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l.get(p, i) * x[p];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}
