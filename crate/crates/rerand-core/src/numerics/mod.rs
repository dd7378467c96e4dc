//! Self-contained numeric kernels: dense symmetric linear algebra,
//! multivariate-normal sampling, chi-squared distribution functions, OLS.

mod mvn;
mod ols;
mod special;

pub use mvn::{sample_mvn, standard_normal, MvnSpec};
pub use ols::{ols_fit, sample_covariance, OlsFit};
pub use special::{chi2_cdf, chi2_pdf, chi2_quantile, ks_test, ln_gamma, reg_lower_gamma};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Largest absolute entry; 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }
}

/// Symmetric positive-definite matrix, validated at construction.
///
/// Construction checks symmetry to 1e-12 relative and runs the Cholesky
/// factorization once; the factor is kept for reuse.
#[derive(Debug, Clone)]
pub struct SymmetricPd {
    values: Matrix,
    factor: CholeskyFactor,
}

impl SymmetricPd {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::DimensionMismatch {
                expected: values.rows(),
                actual: values.cols(),
            });
        }
        for i in 0..values.rows() {
            for j in (i + 1)..values.cols() {
                let (a, b) = (values.get(i, j), values.get(j, i));
                let delta = (a - b).abs();
                if delta > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::NotSymmetric { i, j, delta });
                }
            }
        }
        let factor = cholesky(&values)?;
        Ok(Self { values, factor })
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }
}

/// Lower-triangular Cholesky factor L with A = L * L^T.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solve L u = b (forward substitution).
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut u = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for (j, uj) in u.iter().enumerate().take(i) {
                s -= self.lower.get(i, j) * uj;
            }
            u[i] = s / self.lower.get(i, i);
        }
        u
    }

    /// Solve A x = b via the factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let u = self.forward_solve(b);
        // Back substitution on L^T x = u.
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = u[i];
            for (j, xj) in x.iter().enumerate().skip(i + 1) {
                s -= self.lower.get(j, i) * xj;
            }
            x[i] = s / self.lower.get(i, i);
        }
        x
    }

    /// d^T A^{-1} d, computed as the squared norm of L^{-1} d.
    pub fn inv_quadratic_form(&self, d: &[f64]) -> f64 {
        self.forward_solve(d).iter().map(|u| u * u).sum()
    }

    /// A^{-1}, column by column.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv
    }

    /// L z as a vector (used by MVN sampling).
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(z.len(), n);
        (0..n)
            .map(|i| (0..=i).map(|j| self.lower.get(i, j) * z[j]).sum())
            .collect()
    }
}

/// Cholesky factorization of a symmetric matrix; fails on the first
/// non-positive pivot.
pub fn cholesky(a: &Matrix) -> Result<CholeskyFactor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.cols(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Solve a x = b for symmetric positive-definite a.
pub fn solve_spd(a: &SymmetricPd, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.len(),
        });
    }
    Ok(a.factor().solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn cholesky_of_identity_is_identity() {
        let f = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(3));
    }

    #[test]
    fn cholesky_matches_hand_factorization() {
        // [[4,2],[2,3]] = L L^T with L = [[2,0],[1,sqrt(2)]].
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let f = cholesky(&a).unwrap();
        assert_abs_diff_eq!(f.lower().get(0, 0), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.lower().get(1, 0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.lower().get(1, 1), 2f64.sqrt(), epsilon = 1e-14);
        // Reconstruction error within 1e-10 relative Frobenius.
        let l = f.lower();
        let mut frob_err = 0.0;
        let mut frob = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let recon: f64 = (0..2).map(|k| l.get(i, k) * l.get(j, k)).sum();
                frob_err += (recon - a.get(i, j)).powi(2);
                frob += a.get(i, j).powi(2);
            }
        }
        assert!((frob_err / frob).sqrt() < 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_rejected_with_pivot() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match cholesky(&a) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected non-PD error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(matches!(SymmetricPd::new(a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let a = SymmetricPd::new(Matrix::identity(4)).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5];
        assert_eq!(solve_spd(&a, &b).unwrap(), b);
    }

    #[test]
    fn solve_diagonal_system() {
        let a = SymmetricPd::new(Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap())
            .unwrap();
        let x = solve_spd(&a, &[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
    }

    fn random_spd(dim: usize, rng: &mut impl Rng) -> Matrix {
        // G G^T + dim * I is comfortably positive definite.
        let mut g = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                g.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        let mut a = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let s: f64 = (0..dim).map(|k| g.get(i, k) * g.get(j, k)).sum();
                a.set(i, j, s + if i == j { dim as f64 } else { 0.0 });
            }
        }
        a
    }

    #[test]
    fn solve_residual_is_small_on_random_spd_systems() {
        let mut rng = crate::randset::worker_rng(5, 0);
        for dim in [2usize, 5, 20] {
            let a = SymmetricPd::new(random_spd(dim, &mut rng)).unwrap();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = solve_spd(&a, &b).unwrap();
            let ax = a.values().mul_vec(&x).unwrap();
            let num: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num / den < 1e-8, "dim={dim} residual={}", num / den);
        }
    }

    #[test]
    fn solve_then_multiply_roundtrips_vectors() {
        let mut rng = crate::randset::worker_rng(6, 0);
        for dim in [3usize, 10, 20] {
            let a = SymmetricPd::new(random_spd(dim, &mut rng)).unwrap();
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let av = a.values().mul_vec(&v).unwrap();
            let back = solve_spd(&a, &av).unwrap();
            for (orig, rec) in v.iter().zip(&back) {
                assert_abs_diff_eq!(orig, rec, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut rng = crate::randset::worker_rng(7, 0);
        let a = SymmetricPd::new(random_spd(4, &mut rng)).unwrap();
        let inv = a.factor().inverse();
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = (0..4).map(|k| a.values().get(i, k) * inv.get(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(s, want, epsilon = 1e-10);
            }
        }
    }
}
