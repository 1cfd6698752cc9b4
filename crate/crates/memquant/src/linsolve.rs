//! Conjugate gradient solver for symmetric positive-definite systems.
//!
//! Every estimator in this crate reduces to solving `V beta = U` with `V`
//! a curvature-like symmetric matrix, and none of them ever form `V^{-1}`
//! explicitly. The recurrences are the classical ones: step length from
//! the current residual norm, residual downdate, Fletcher-Reeves ratio,
//! and direction update. The stopping rule is the scale-free relative
//! residual `||r_k||_2 <= tol * (1 + ||U||_2)`.

use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Relative residual tolerance used when callers do not override it.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default iteration budget for a system of dimension `n`.
pub fn default_max_iter(n: usize) -> usize {
    10 * n.max(1)
}

/// Result of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Euclidean residual norm at exit.
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `V x = u` by conjugate gradients.
///
/// `v` must be square and symmetric within `1e-10` relative; `x0` is an
/// optional warm start (zero otherwise). Fails with `NoConvergence` when
/// `max_iter` is exhausted before `||r||_2 <= tol * (1 + ||u||_2)`, which
/// for the aggregated curvature matrices signals a violated eigenvalue
/// condition or a bandwidth too small for the data.
pub fn cg_solve(
    v: &Mat,
    u: &[f64],
    tol: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
) -> Result<CgSolution> {
    let n = v.n_rows();
    if v.n_cols() != n || u.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u.len(),
        });
    }
    if v.asymmetry() > 1e-10 {
        return Err(Error::NotSymmetric);
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x0.len(),
            });
        }
    }
    let threshold = tol * (1.0 + norm(u));

    let mut x: Vec<f64> = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r: Vec<f64> = {
        let vx = v.matvec(&x);
        u.iter().zip(&vx).map(|(b, a)| b - a).collect()
    };
    let mut d = r.clone();
    let mut rr = dot(&r, &r);

    if rr.sqrt() <= threshold {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual_norm: rr.sqrt(),
        });
    }

    for k in 1..=max_iter {
        let vd = v.matvec(&d);
        let dvd = dot(&d, &vd);
        if dvd <= 0.0 || !dvd.is_finite() {
            // Curvature lost along the search direction: V is not
            // numerically positive definite.
            return Err(Error::NoConvergence {
                iterations: k - 1,
                residual: rr.sqrt(),
            });
        }
        let alpha = rr / dvd;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * vd[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= threshold {
            return Ok(CgSolution {
                x,
                iterations: k,
                residual_norm: rr_new.sqrt(),
            });
        }
        let gamma = rr_new / rr;
        for i in 0..n {
            d[i] = r[i] + gamma * d[i];
        }
        rr = rr_new;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rr.sqrt(),
    })
}

/// [`cg_solve`] with the default tolerance and iteration budget.
pub fn cg_solve_default(v: &Mat, u: &[f64], x0: Option<&[f64]>) -> Result<CgSolution> {
    cg_solve(v, u, DEFAULT_TOL, default_max_iter(u.len()), x0)
}
