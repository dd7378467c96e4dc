//! Multivariate-normal specification and sampling.

use rand::Rng;

use super::SymmetricPd;
use crate::error::{Error, Result};

/// Mean vector plus positive-definite covariance.
#[derive(Debug, Clone)]
pub struct MvnSpec {
    mean: Vec<f64>,
    cov: SymmetricPd,
}

impl MvnSpec {
    pub fn new(mean: Vec<f64>, cov: SymmetricPd) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                actual: mean.len(),
            });
        }
        Ok(Self { mean, cov })
    }

    /// Zero-mean spec with the given diagonal variances.
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        let k = variances.len();
        let mut m = super::Matrix::zeros(k, k);
        for (i, &v) in variances.iter().enumerate() {
            m.set(i, i, v);
        }
        Self::new(vec![0.0; k], SymmetricPd::new(m)?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymmetricPd {
        &self.cov
    }

    /// True when every off-diagonal covariance entry is zero.
    pub fn is_diagonal(&self) -> bool {
        let k = self.dim();
        let v = self.cov.values();
        (0..k).all(|i| (0..k).all(|j| i == j || v.get(i, j) == 0.0))
    }
}

/// One standard-normal draw via Box-Muller (cosine branch only, so each
/// draw consumes exactly two uniforms and the stream layout stays fixed).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let mut u1: f64 = rng.random();
    while u1 <= 0.0 {
        u1 = rng.random();
    }
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draw x = mean + L z with z iid standard normal.
pub fn sample_mvn<R: Rng>(spec: &MvnSpec, rng: &mut R) -> Vec<f64> {
    let k = spec.dim();
    let z: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
    let lz = spec.cov.factor().mul_lower(&z);
    spec.mean.iter().zip(&lz).map(|(m, v)| m + v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_covariance, Matrix, SymmetricPd};
    use crate::randset::worker_rng;

    #[test]
    fn degenerate_covariance_is_rejected() {
        assert!(MvnSpec::diagonal(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let spec = MvnSpec::diagonal(&[1.0, 2.0]).unwrap();
        let a = sample_mvn(&spec, &mut worker_rng(3, 0));
        let b = sample_mvn(&spec, &mut worker_rng(3, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn identity_covariance_moments() {
        let spec = MvnSpec::diagonal(&[1.0, 1.0]).unwrap();
        let mut rng = worker_rng(4, 0);
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_mvn(&spec, &mut rng)).collect();
        let x = Matrix::from_rows(&draws).unwrap();
        let cov = sample_covariance(&x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov.get(i, j) - want).abs() < 0.02,
                    "cov[{i}][{j}] = {}",
                    cov.get(i, j)
                );
            }
        }
    }

    #[test]
    fn correlated_covariance_is_recovered() {
        // cov = A A^T for a fixed full-rank A; Frobenius error < 5% at 1e5 draws.
        let a = [[1.0, 0.0, 0.0], [0.7, 0.8, 0.0], [-0.3, 0.4, 1.2]];
        let mut target = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i][k] * a[j][k]).sum();
                target.set(i, j, s);
            }
        }
        let spec = MvnSpec::new(vec![0.0; 3], SymmetricPd::new(target.clone()).unwrap()).unwrap();
        let mut rng = worker_rng(9, 0);
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_mvn(&spec, &mut rng)).collect();
        let cov = sample_covariance(&Matrix::from_rows(&draws).unwrap()).unwrap();
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                err += (cov.get(i, j) - target.get(i, j)).powi(2);
                norm += target.get(i, j).powi(2);
            }
        }
        assert!((err / norm).sqrt() < 0.05, "relative Frobenius error {}", (err / norm).sqrt());
    }

    #[test]
    fn mean_shift_is_applied() {
        let cov = SymmetricPd::new(Matrix::identity(2)).unwrap();
        let spec = MvnSpec::new(vec![10.0, -5.0], cov).unwrap();
        let mut rng = worker_rng(8, 0);
        let mut sums = [0.0f64; 2];
        let n = 20_000;
        for _ in 0..n {
            let x = sample_mvn(&spec, &mut rng);
            sums[0] += x[0];
            sums[1] += x[1];
        }
        assert!((sums[0] / n as f64 - 10.0).abs() < 0.05);
        assert!((sums[1] / n as f64 + 5.0).abs() < 0.05);
    }
}
