//! Smoothing kernel and check loss.
//!
//! `smooth_h` is the integral of the biweight (quartic) kernel: a smooth,
//! nondecreasing surrogate for the step indicator `1{u > 0}` that is
//! exactly 0 below -1 and exactly 1 above +1. Its derivative
//! `smooth_h_prime` is the biweight kernel itself. `check_loss` is the
//! asymmetric absolute deviation whose minimizer is the tau-th quantile.

use crate::types::QuantileLevel;

/// Smoothed step function: integral of the biweight kernel.
///
/// Returns 0 for `u <= -1`, 1 for `u >= 1`, and
/// `1/2 + (15/16)(u - (2/3)u^3 + (1/5)u^5)` in between. Total on all of
/// the real line, continuous, and nondecreasing.
#[inline]
pub fn smooth_h(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let u3 = u * u * u;
        let u5 = u3 * u * u;
        0.5 + 0.9375 * (u - (2.0 / 3.0) * u3 + 0.2 * u5)
    }
}

/// Derivative of [`smooth_h`]: the biweight kernel `(15/16)(1 - u^2)^2`
/// on (-1, 1), zero outside. Nonnegative and integrates to one.
#[inline]
pub fn smooth_h_prime(u: f64) -> f64 {
    if u <= -1.0 || u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        0.9375 * t * t
    }
}

/// Check loss `x (tau - 1{x <= 0})`: nonnegative, zero only at zero,
/// convex and piecewise linear in `x`.
#[inline]
pub fn check_loss(x: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if x <= 0.0 {
        x * (t - 1.0)
    } else {
        x * t
    }
}
