//! Ordinary least squares and sample covariance.

use super::{cholesky, Matrix};
use crate::error::{Error, Result};

/// OLS fit: coefficients, residual variance, and (X^T X)^{-1}.
///
/// The coefficient covariance sigma^2 (X^T X)^{-1} may be the zero matrix
/// when the fit is exact, so it is exposed as a plain matrix while the
/// positive-definite (X^T X)^{-1} factor is kept for degenerate-safe
/// coefficient sampling.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub sigma2: f64,
    pub xtx_inv: Matrix,
    pub df_resid: usize,
}

impl OlsFit {
    /// sigma^2 (X^T X)^{-1}.
    pub fn coef_cov(&self) -> Matrix {
        let k = self.xtx_inv.rows();
        let mut out = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                out.set(i, j, self.sigma2 * self.xtx_inv.get(i, j));
            }
        }
        out
    }
}

/// Fit y on `x` by least squares, optionally prepending an intercept column.
///
/// Errors with `SingularDesign` when the design is rank deficient.
#[allow(clippy::needless_range_loop)] // design entries are addressed (row, col)
pub fn ols_fit(x: &Matrix, y: &[f64], intercept: bool) -> Result<OlsFit> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let k = x.cols() + usize::from(intercept);
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "OLS needs more rows than coefficients (n={n}, coefficients={k})"
        )));
    }
    let design_entry = |i: usize, j: usize| -> f64 {
        if intercept {
            if j == 0 {
                1.0
            } else {
                x.get(i, j - 1)
            }
        } else {
            x.get(i, j)
        }
    };

    let mut xtx = Matrix::zeros(k, k);
    let mut xty = vec![0.0; k];
    for i in 0..n {
        for a in 0..k {
            let xa = design_entry(i, a);
            xty[a] += xa * y[i];
            for b in a..k {
                let v = xtx.get(a, b) + xa * design_entry(i, b);
                xtx.set(a, b, v);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx.set(a, b, xtx.get(b, a));
        }
    }

    let factor = cholesky(&xtx).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularDesign,
        other => other,
    })?;
    let coefficients = factor.solve(&xty);
    let xtx_inv = factor.inverse();

    let mut rss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..k).map(|j| design_entry(i, j) * coefficients[j]).sum();
        rss += (y[i] - fitted).powi(2);
    }
    let df_resid = n - k;
    Ok(OlsFit {
        coefficients,
        sigma2: rss / df_resid as f64,
        xtx_inv,
        df_resid,
    })
}

/// Unbiased sample covariance (n - 1 denominator), two-pass.
///
/// The result is symmetric but may be singular (e.g. identical rows give
/// the zero matrix); positive definiteness is the caller's concern.
pub fn sample_covariance(x: &Matrix) -> Result<Matrix> {
    let (n, k) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "sample covariance needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        for a in 0..k {
            let da = row[a] - mean[a];
            for b in a..k {
                let v = cov.get(a, b) + da * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..k {
        for b in a..k {
            let v = cov.get(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn exact_linear_data_recovers_slope_with_zero_residual() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let y = vec![2.0, 4.0, 6.0, 8.0];
        let fit = ols_fit(&x, &y, false).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma2, 0.0, epsilon = 1e-20);
        assert_eq!(fit.coef_cov().get(0, 0), 0.0);
    }

    #[test]
    fn intercept_only_fit_is_the_mean() {
        let x = Matrix::zeros(5, 0);
        let y = vec![1.0, 2.0, 3.0, 4.0, 10.0];
        let fit = ols_fit(&x, &y, true).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_equations_hold_on_random_data() {
        let mut rng = crate::randset::worker_rng(12, 0);
        let n = 50;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fit = ols_fit(&x, &y, true).unwrap();
        // X^T (y - X beta) = 0.
        let k = 4;
        let design = |i: usize, j: usize| if j == 0 { 1.0 } else { x.get(i, j - 1) };
        #[allow(clippy::needless_range_loop)]
        for j in 0..k {
            let mut dot = 0.0;
            for i in 0..n {
                let fitted: f64 = (0..k).map(|c| design(i, c) * fit.coefficients[c]).sum();
                dot += design(i, j) * (y[i] - fitted);
            }
            assert!(dot.abs() < 1e-8, "normal equation {j} residual {dot}");
        }
    }

    #[test]
    fn coefficients_are_invariant_to_row_permutation() {
        let mut rng = crate::randset::worker_rng(14, 0);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fit = ols_fit(&Matrix::from_rows(&rows).unwrap(), &y, true).unwrap();

        let perm: Vec<usize> = (0..20).rev().collect();
        let rows_p: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let y_p: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let fit_p = ols_fit(&Matrix::from_rows(&rows_p).unwrap(), &y_p, true).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&fit_p.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![3.0, 6.0],
            vec![4.0, 8.0],
        ])
        .unwrap();
        let y = vec![1.0, 2.0, 3.0, 4.0];
        assert!(matches!(ols_fit(&x, &y, false), Err(Error::SingularDesign)));
    }

    #[test]
    fn covariance_of_two_points() {
        let x = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let cov = sample_covariance(&x).unwrap();
        assert_eq!(cov.get(0, 0), 2.0);
    }

    #[test]
    fn identical_rows_give_zero_covariance() {
        let x = Matrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap();
        let cov = sample_covariance(&x).unwrap();
        assert_eq!(cov.max_abs(), 0.0);
        assert!(super::super::SymmetricPd::new(cov).is_err());
    }

    #[test]
    fn covariance_matches_textbook_formula() {
        let mut rng = crate::randset::worker_rng(15, 0);
        let n = 100;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let cov = sample_covariance(&x).unwrap();
        // Independent pairwise loop over centered products.
        for a in 0..3 {
            for b in 0..3 {
                let ma: f64 = rows.iter().map(|r| r[a]).sum::<f64>() / n as f64;
                let mb: f64 = rows.iter().map(|r| r[b]).sum::<f64>() / n as f64;
                let want: f64 = rows.iter().map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>()
                    / (n as f64 - 1.0);
                assert_abs_diff_eq!(cov.get(a, b), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_row_is_rejected() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(sample_covariance(&x).is_err());
    }
}
