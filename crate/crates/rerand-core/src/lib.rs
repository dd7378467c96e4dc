//! Rerandomization-based experimental design, end to end: enumerate or
//! sample candidate treatment assignments, score covariate balance, build
//! acceptance sets, run exact randomization tests and fiducial intervals
//! conditioned on those sets, and choose the acceptance probability.

pub mod balance;
pub mod error;
pub mod inference;
pub mod numerics;
pub mod randset;
pub mod simharness;
pub mod threshold;

pub use balance::{AcceptanceRule, AcceptanceSet, BalanceMetric, CovariateMatrix};
pub use error::{Error, Result};
pub use inference::{
    FiducialInterval, IntervalMethod, OutcomeVector, RandomizationTestResult,
};
pub use numerics::{Matrix, MvnSpec, SymmetricPd};
pub use randset::{AssignmentVector, DesignSpace, DesignStructure};
pub use threshold::{DesignCurve, PriorSpec, TauPrior};
