//! Domain types shared by all estimators.
//!
//! Users supply `p` covariates per observation; the library prepends the
//! constant intercept entry internally, so every estimator-facing vector
//! has dimension `p' = p + 1` with index 0 reserved for the intercept.

use crate::error::{Error, Result};

/// Quantile level `tau` in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(Error::InvalidQuantileLevel(tau))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Positive smoothing bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Bandwidth(h))
        } else {
            Err(Error::InvalidBandwidth(h))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// One response paired with its covariates (without the intercept entry).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    y: f64,
    x: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, x: Vec<f64>) -> Result<Self> {
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObservation);
        }
        Ok(Observation { y, x })
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    /// Covariates without the intercept; length `p`.
    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Number of covariates `p`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Regression coefficients of length `p' = p + 1`; index 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(Vec<f64>);

impl Coefficients {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObservation);
        }
        Ok(Coefficients(beta))
    }

    /// All-zero coefficient vector of dimension `p_prime`.
    pub fn zeros(p_prime: usize) -> Self {
        Coefficients(vec![0.0; p_prime])
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn intercept(&self) -> f64 {
        self.0[0]
    }

    /// Dimension `p' = p + 1`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Fitted value `x'beta` for a covariate row without intercept.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len() + 1, self.0.len());
        let mut acc = self.0[0];
        for (b, v) in self.0[1..].iter().zip(x) {
            acc += b * v;
        }
        acc
    }

    /// Euclidean distance to another coefficient vector.
    pub fn distance(&self, other: &Coefficients) -> f64 {
        self.0
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn from_raw(beta: Vec<f64>) -> Self {
        Coefficients(beta)
    }
}

impl std::ops::Index<usize> for Coefficients {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dot product `v'beta` of an arbitrary direction with the coefficients.
pub fn dot(v: &[f64], beta: &Coefficients) -> f64 {
    debug_assert_eq!(v.len(), beta.dim());
    v.iter().zip(beta.as_slice()).map(|(a, b)| a * b).sum()
}

/// The equally-weighted unit direction `(p+1)^{-1/2} * 1` used throughout
/// the simulation studies.
pub fn unit_direction(p_prime: usize) -> Vec<f64> {
    vec![1.0 / (p_prime as f64).sqrt(); p_prime]
}
