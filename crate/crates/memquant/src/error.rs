//! Error type shared by every estimator and solver in this crate.

use thiserror::Error;

/// Errors surfaced by estimators, solvers, generators, and the network
/// simulator. Variants carry enough context to locate the failing batch,
/// round, or node.
#[derive(Debug, Error)]
pub enum Error {
    /// A quantile level outside the open interval (0, 1).
    #[error("quantile level must satisfy 0 < tau < 1, got {0}")]
    InvalidQuantileLevel(f64),

    /// A bandwidth that is not a positive finite number.
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    /// Non-finite observation entries.
    #[error("observation contains a non-finite value")]
    NonFiniteObservation,

    /// Vectors or matrices of incompatible dimension were combined.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Design matrix is numerically rank-deficient.
    #[error("design matrix is numerically rank-deficient")]
    RankDeficient,

    /// Iterative solver exhausted its budget before meeting tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Conjugate gradient failed; the aggregated curvature matrix is
    /// singular or indefinite for the requested tolerance.
    #[error("linear system is singular or too ill-conditioned to solve")]
    SingularSystem,

    /// Matrix handed to the conjugate gradient solver is not symmetric.
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,

    /// The sample-quantile index rule left the valid range [1, m].
    #[error("quantile level {tau} is out of range for {m} samples")]
    QuantileOutOfRange { tau: f64, m: usize },

    /// Brute-force oracle guard tripped.
    #[error("instance too large for the exhaustive oracle (n <= {max_n}, p <= {max_p})")]
    TooLarge { max_n: usize, max_p: usize },

    /// Dimension constraints such as p < m <= n were violated.
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    /// Interval arithmetic exceeded the exactly-representable integer range.
    #[error("interval bound m^a overflows the exact integer range")]
    Overflow,

    /// Invalid arity for a k-ary tree topology.
    #[error("tree arity must be at least 2, got {0}")]
    InvalidArity(usize),

    /// Topology description is not a single-rooted tree.
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    /// Sample count disagrees with the accumulated statistics.
    #[error("count mismatch: statistics cover {stats} rows but {given} were claimed")]
    CountMismatch { stats: u64, given: u64 },

    /// Batch is too small for the requested fit.
    #[error("batch of {got} observations is too small, need at least {need}")]
    BatchTooSmall { need: usize, got: usize },

    /// Experiment or driver configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Failure inside a divide-and-conquer round.
    #[error("round {round}: {source}")]
    AtRound {
        round: u32,
        #[source]
        source: Box<Error>,
    },

    /// Failure while fitting one batch of a per-batch method.
    #[error("batch {batch}: {source}")]
    AtBatch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    /// Failure at a specific node of the simulated network.
    #[error("node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_round(self, round: u32) -> Self {
        Error::AtRound {
            round,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_batch(self, batch: usize) -> Self {
        Error::AtBatch {
            batch,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
