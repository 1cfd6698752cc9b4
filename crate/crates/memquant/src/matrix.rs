//! Small dense matrices.
//!
//! Every matrix in this crate is `p' x p'` with `p'` rarely above a few
//! hundred, so plain row-major storage with straightforward loops is both
//! simple and fast enough. Symmetric accumulations fill the upper
//! triangle and mirror it once per batch.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Mat {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            n_rows,
            n_cols,
            data,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `y = A x`.
    #[allow(clippy::needless_range_loop)]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Mat) -> Result<()> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows * self.n_cols,
                got: other.n_rows * other.n_cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// Rank-one symmetric update `self += w * z z'` where `z = (1, x)`,
    /// the covariate row with the intercept entry prepended. Only the
    /// upper triangle is written; call [`Mat::mirror_upper`] afterwards.
    #[allow(clippy::needless_range_loop)]
    pub fn add_outer_intercepted_upper(&mut self, x: &[f64], w: f64) {
        debug_assert_eq!(x.len() + 1, self.n_cols);
        let n = self.n_cols;
        self.data[0] += w;
        for j in 0..x.len() {
            self.data[j + 1] += w * x[j];
        }
        for i in 0..x.len() {
            let wi = w * x[i];
            let base = (i + 1) * n;
            for j in i..x.len() {
                self.data[base + j + 1] += wi * x[j];
            }
        }
    }

    /// Copy the upper triangle onto the lower one.
    pub fn mirror_upper(&mut self) {
        let n = self.n_cols;
        for i in 1..self.n_rows {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest asymmetry `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        if self.n_rows != self.n_cols {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n_rows {
            for j in (i + 1)..self.n_cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn trace(&self) -> f64 {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .sum()
    }
}

/// Solve the dense square system `A x = b` by LU with partial pivoting.
///
/// Returns `RankDeficient` when a pivot falls below `1e-12` relative to
/// the largest entry of `A`.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n_rows();
    if a.n_cols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut lu = a.data.clone();
    let mut x: Vec<f64> = b.to_vec();
    let tiny = 1e-12 * a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        // Partial pivoting.
        let mut pivot_row = col;
        let mut pivot_val = lu[col * n + col].abs();
        for r in (col + 1)..n {
            let v = lu[r * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val <= tiny {
            return Err(Error::RankDeficient);
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        let inv = 1.0 / lu[col * n + col];
        for r in (col + 1)..n {
            let factor = lu[r * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            lu[r * n + col] = factor;
            for j in (col + 1)..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
            x[r] -= factor * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc -= lu[i * n + j] * x[j];
        }
        x[i] = acc / lu[i * n + i];
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
pub fn symmetric_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.n_rows();
    debug_assert_eq!(a.n_cols(), n);
    let mut m = a.data.clone();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= 1e-14 * a.max_abs().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}
