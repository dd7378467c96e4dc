use num_bigint::BigUint;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("candidate count {count} exceeds the enumerable range (2^64 - 1)")]
    EnumerationOverflow { count: BigUint },

    #[error("matrix is not symmetric (entries ({i},{j}) and ({j},{i}) differ by {delta:e})")]
    NotSymmetric { i: usize, j: usize, delta: f64 },

    #[error("matrix is not positive definite (pivot {pivot} is non-positive)")]
    NotPositiveDefinite { pivot: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("metric mismatch: {0}")]
    MetricMismatch(String),

    #[error("empty acceptance set: threshold {threshold} is below the minimum score {min_score}")]
    EmptyAcceptanceSet { threshold: f64, min_score: f64 },

    #[error("observed assignment is not a member of the acceptance set")]
    InadmissibleAssignment,

    #[error(
        "infeasible minimum p-value target: smallest achievable is {smallest_achievable:e} \
         ({n_candidates} candidates)"
    )]
    InfeasibleTarget {
        smallest_achievable: f64,
        n_candidates: BigUint,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error at line {line}, column {column}: {message}")]
    Data {
        line: u64,
        column: String,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
