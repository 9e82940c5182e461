//! Dense row-major matrices and the few factorizations the detector needs.
//!
//! Storage is a flat `Vec<f64>` in row-major order so that serialized model
//! artifacts list entries as `m[0][0], m[0][1], ..., m[rows-1][cols-1]`.
//! Factorizations are delegated to `nalgebra`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries, `rows * cols` long.
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dim(c, row.len(), "matrix row length"));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
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

    /// `self * x`, writing into `out`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `selfᵀ * y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::dim(self.cols, other.rows, "matmul inner dimension"));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Returns the lower-triangular factor `L` with `L Lᵀ = m`. Failure means the
/// matrix is not numerically positive definite.
pub fn cholesky_lower(m: &Mat) -> Result<Mat> {
    if m.rows != m.cols {
        return Err(Error::dim(m.rows, m.cols, "cholesky of non-square matrix"));
    }
    let chol = m
        .to_na()
        .cholesky()
        .ok_or_else(|| Error::LinAlg("matrix is not positive definite".into()))?;
    Ok(Mat::from_na(&chol.l()))
}

/// Inverse of an SPD matrix from its Cholesky factor. The result is
/// symmetrized so that `inv[i][j] == inv[j][i]` bit for bit.
pub fn spd_inverse(lower: &Mat) -> Mat {
    let n = lower.rows;
    let l = lower.to_na();
    let chol = nalgebra::Cholesky::pack_dirty(l);
    let inv = chol.inverse();
    Mat::from_fn(n, n, |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)]))
}

/// Solves `L y = b` for lower-triangular `L` by forward substitution.
pub fn forward_substitute(lower: &Mat, b: &[f64]) -> Vec<f64> {
    let n = lower.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = lower.row(i);
        let s = dot(&row[..i], &y[..i]);
        y[i] = (b[i] - s) / row[i];
    }
    y
}

/// Ridge least squares: finds `B` (p × q) minimizing `‖X B − Y‖² + λ‖B‖²`,
/// with `X` n × p and `Y` n × q.
pub fn ridge_solve(x: &Mat, y: &Mat, lambda: f64) -> Result<Mat> {
    if x.rows != y.rows {
        return Err(Error::dim(x.rows, y.rows, "ridge sample count"));
    }
    let xn = x.to_na();
    let yn = y.to_na();
    let mut gram = xn.transpose() * &xn;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = xn.transpose() * yn;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::LinAlg("ridge normal equations are singular".into()))?;
    Ok(Mat::from_na(&chol.solve(&rhs)))
}

/// Convenience for tests and diagnostics.
pub fn solve_spd(lower: &Mat, b: &[f64]) -> Vec<f64> {
    let l = lower.to_na();
    let chol = nalgebra::Cholesky::pack_dirty(l);
    chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
}
