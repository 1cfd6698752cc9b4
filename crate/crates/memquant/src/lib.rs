//! Quantile regression when the data does not fit in memory.
//!
//! The classical estimator minimizes a non-differentiable check loss and
//! needs all `n` observations at once. This crate instead refines an
//! initial fit computed on one small batch: every batch is summarized by
//! an additively mergeable `(U, V)` statistic built from a smoothed
//! score, and each aggregation round solves the merged linear system at
//! a bandwidth that shrinks quadratically. A few rounds match the
//! efficiency of the pooled fit while touching each batch once per
//! round with `O(p^2)` communication.
//!
//! The same statistics power a one-pass streaming estimator with
//! constant memory, sandwich-variance confidence intervals, the naive
//! averaging baselines they are compared against, simulation-faithful
//! data generators with a Monte-Carlo coverage harness, and a simulator
//! for tree-structured sensor networks.
//!
//! ```
//! use memquant::inference::{build_variance_estimate, confidence_interval,
//!     covariate_second_moment};
//! use memquant::leqr::{dc_leqr, DcConfig};
//! use memquant::rng::Rng;
//! use memquant::simgen::{gen_observations, NoiseModel};
//! use memquant::types::unit_direction;
//! use memquant::QuantileLevel;
//!
//! let tau = QuantileLevel::new(0.25)?;
//! let mut rng = Rng::new(7);
//! let data = gen_observations(4_000, 3, NoiseModel::HomoscedasticNormal, &mut rng);
//!
//! // Partition into batches of 100 rows and refine over three rounds.
//! let partitions: Vec<_> = data.chunks(100).collect();
//! let (beta, diagnostics) = dc_leqr(&partitions, &DcConfig::new(tau, 100, 3))?;
//!
//! // Interval for the equal-weight direction from the final-round
//! // curvature and the covariate second moment.
//! let xx = covariate_second_moment(&partitions);
//! let ve = build_variance_estimate(&diagnostics.final_stats, &xx, diagnostics.n)?;
//! let v0 = unit_direction(beta.dim());
//! let (lo, hi) = confidence_interval(&beta, &v0, &ve, tau, 0.05)?;
//! assert!(lo < hi);
//! # Ok::<(), memquant::Error>(())
//! ```

pub mod baselines;
pub mod batch_qr;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod leqr;
pub mod linsolve;
pub mod matrix;
pub mod nettree;
pub mod online;
pub mod rng;
pub mod simgen;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use types::{Bandwidth, Coefficients, Observation, QuantileLevel};
