//! Shared fixtures for the benchmark suite.

use rerand_core::balance::CovariateMatrix;
use rerand_core::numerics::{sample_mvn, MvnSpec};
use rerand_core::randset::worker_rng;

/// Deterministic n x k standard-normal covariate table.
pub fn covariates(n: usize, k: usize, seed: u64) -> CovariateMatrix {
    let spec = MvnSpec::diagonal(&vec![1.0; k]).expect("unit variances are positive definite");
    let mut rng = worker_rng(seed, 0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| sample_mvn(&spec, &mut rng)).collect();
    CovariateMatrix::from_rows(&rows).expect("sampled covariates are finite")
}
