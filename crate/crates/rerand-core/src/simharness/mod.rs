//! Simulation harness: linear data-generating processes, selector
//! evaluation against the true expected-p-value minimizer, OLS-based
//! potential-outcome imputation from experimental data, and effect-estimate
//! sampling reports.

mod data;

pub use data::{DataTable, SemiSyntheticData};

use num_traits::ToPrimitive;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::balance::{BalanceMetric, CovariateMatrix, ScoredCandidate, Scorer};
use crate::error::{Error, Result};
use crate::inference::diff_in_means_of;
use crate::numerics::{cholesky, ols_fit, sample_mvn, standard_normal, CholeskyFactor, Matrix, MvnSpec, OlsFit};
use crate::randset::{derive_seed, worker_rng, DesignSpace};
use crate::threshold::{
    design_expected_pvalue, expected_pvalue_curve, DesignCurve, DesignPoint, PriorSpec,
};

/// Linear potential-outcome model: Y(0) = X b + e0, Y(1) = tau + X b + e1,
/// covariate rows iid multivariate normal with diagonal covariance.
#[derive(Debug, Clone)]
pub struct LinearDgp {
    pub n: usize,
    pub k: usize,
    pub covariate_spec: MvnSpec,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub noise_sd: f64,
}

impl LinearDgp {
    pub fn new(
        n: usize,
        covariate_spec: MvnSpec,
        beta: Vec<f64>,
        tau: f64,
        noise_sd: f64,
    ) -> Result<Self> {
        let k = covariate_spec.dim();
        if beta.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: beta.len(),
            });
        }
        if !covariate_spec.is_diagonal() {
            return Err(Error::InvalidConfig(
                "covariate covariance must be diagonal in the linear DGP".into(),
            ));
        }
        if noise_sd < 0.0 {
            return Err(Error::InvalidConfig(format!("noise sd must be nonnegative, got {noise_sd}")));
        }
        if n < 2 {
            return Err(Error::InvalidDesign(format!("need at least 2 units, got {n}")));
        }
        Ok(Self {
            n,
            k,
            covariate_spec,
            beta,
            tau,
            noise_sd,
        })
    }

    /// Unit-variance covariates, beta = (1, ..., 1).
    pub fn standard(n: usize, k: usize, tau: f64, noise_sd: f64) -> Result<Self> {
        Self::new(n, MvnSpec::diagonal(&vec![1.0; k])?, vec![1.0; k], tau, noise_sd)
    }
}

/// Draw one complete potential-outcome table from the DGP.
///
/// Draw order is fixed (covariate rows, control noise, treated noise), so a
/// given rng state always produces the same table.
pub fn simulate_potential_outcomes(
    dgp: &LinearDgp,
    rng: &mut ChaCha8Rng,
) -> Result<(CovariateMatrix, Vec<f64>, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = (0..dgp.n)
        .map(|_| sample_mvn(&dgp.covariate_spec, rng))
        .collect();
    let x = CovariateMatrix::from_rows(&rows)?;
    let xb: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(&dgp.beta).map(|(a, b)| a * b).sum())
        .collect();
    let y0: Vec<f64> = xb
        .iter()
        .map(|v| v + dgp.noise_sd * standard_normal(rng))
        .collect();
    let y1: Vec<f64> = xb
        .iter()
        .map(|v| dgp.tau + v + dgp.noise_sd * standard_normal(rng))
        .collect();
    Ok((x, y0, y1))
}

/// Expected-p-value curve under the true DGP parameters (the evaluation
/// target for selector bias), averaging over covariate and noise draws.
pub fn true_expected_pvalue_curve(
    dgp: &LinearDgp,
    space: &DesignSpace,
    p_a_grid: &[f64],
    mc_iters: u64,
    seed: u64,
) -> Result<DesignCurve> {
    if dgp.n != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            actual: dgp.n,
        });
    }
    expected_pvalue_curve(space, p_a_grid, mc_iters, seed, |rng| {
        simulate_potential_outcomes(dgp, rng)
    })
}

/// The p_a minimizing the expected p-value under the true DGP.
pub fn true_optimal_p_a(
    dgp: &LinearDgp,
    space: &DesignSpace,
    p_a_grid: &[f64],
    mc_iters: u64,
    seed: u64,
) -> Result<f64> {
    Ok(true_expected_pvalue_curve(dgp, space, p_a_grid, mc_iters, seed)?.argmin_p_a)
}

/// Configuration of the selector evaluation study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Sample sizes; each must be one of 6, 12, 18 (half treated).
    pub n_grid: Vec<usize>,
    /// Treatment effects; each must be 0.1 or 1.0.
    pub tau_grid: Vec<f64>,
    pub replications: u64,
    /// Explicit p_a grid; when None, a log-spaced count grid is used.
    pub p_a_grid: Option<Vec<f64>>,
    /// Smallest acceptance count of the default grid.
    pub count_grid_from: u64,
    pub count_grid_points: usize,
    pub seed: u64,
    pub k: usize,
    pub beta: Vec<f64>,
    /// Error scale; variance when `noise_is_variance`, else standard deviation.
    pub noise: f64,
    pub noise_is_variance: bool,
    pub selector_mc_iters: u64,
    pub truth_mc_iters: u64,
    pub uniform_baseline_draws: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![6, 12, 18],
            tau_grid: vec![0.1, 1.0],
            replications: 200,
            p_a_grid: None,
            count_grid_from: 10,
            count_grid_points: 12,
            seed: 0,
            k: 2,
            beta: vec![1.0, 1.0],
            noise: 0.1,
            noise_is_variance: true,
            selector_mc_iters: 50,
            truth_mc_iters: 600,
            uniform_baseline_draws: 1000,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.tau_grid.is_empty() {
            return Err(Error::InvalidConfig("n_grid and tau_grid must be nonempty".into()));
        }
        for &n in &self.n_grid {
            if ![6, 12, 18].contains(&n) {
                return Err(Error::InvalidConfig(format!("n_grid entries must be one of 6, 12, 18; got {n}")));
            }
        }
        for &tau in &self.tau_grid {
            if tau != 0.1 && tau != 1.0 {
                return Err(Error::InvalidConfig(format!("tau_grid entries must be 0.1 or 1.0; got {tau}")));
            }
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.beta.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: self.beta.len(),
            });
        }
        if self.noise < 0.0 {
            return Err(Error::InvalidConfig(format!("noise must be nonnegative, got {}", self.noise)));
        }
        if let Some(grid) = &self.p_a_grid {
            if grid.is_empty() {
                return Err(Error::InvalidConfig("explicit p_a grid is empty".into()));
            }
        }
        Ok(())
    }

    pub fn noise_sd(&self) -> f64 {
        if self.noise_is_variance {
            self.noise.sqrt()
        } else {
            self.noise
        }
    }

    /// The p_a grid for a space with `total` candidates: explicit values, or
    /// log-spaced acceptance counts from `count_grid_from` up to all of them.
    pub fn grid_for(&self, total: u64) -> Vec<f64> {
        if let Some(grid) = &self.p_a_grid {
            return grid.clone();
        }
        let from = self.count_grid_from.clamp(1, total);
        let points = self.count_grid_points.max(2);
        let (lo, hi) = ((from as f64).ln(), (total as f64).ln());
        let mut counts: Vec<u64> = (0..points)
            .map(|i| {
                let c = (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
                (c.round() as u64).clamp(from, total)
            })
            .collect();
        counts.sort_unstable();
        counts.dedup();
        counts.into_iter().map(|c| c as f64 / total as f64).collect()
    }
}

/// Per-(n, tau) results of the selector study.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub n: usize,
    pub tau: f64,
    pub true_optimal_p_a: f64,
    /// The precise expected-p-value curve under the true DGP.
    pub truth_curve: Vec<DesignPoint>,
    pub mean_selected_p_a: f64,
    pub selected_p_a: Vec<f64>,
    /// mean(selected) - true optimum.
    pub bias: f64,
    pub rmse: f64,
    pub uniform_rmse: f64,
    /// rmse / uniform_rmse.
    pub relative_rmse: f64,
    /// Mean |tau_hat - tau| / |tau| at the median selected p_a and at p_a = 1.
    pub tau_dev_at_selected: f64,
    pub tau_dev_at_full: f64,
}

/// Full study output.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub cells: Vec<CellReport>,
    pub replications: u64,
    pub seed: u64,
}

/// Run the selector study: per cell, compare the prior-informed selected
/// p_a against the true optimum, normalizing RMSE by uniform selection of
/// p_a over the feasible range.
///
/// The prior supplies the beta/tau/noise assumptions; its covariate model
/// is replaced per replication by the realized covariate draw, since the
/// selector runs conditionally on the covariates the experimenter holds.
pub fn run_selector_study(config: &StudyConfig, prior: &PriorSpec) -> Result<EvaluationReport> {
    config.validate()?;
    if prior.k() != config.k {
        return Err(Error::DimensionMismatch {
            expected: config.k,
            actual: prior.k(),
        });
    }
    let mut cells = Vec::new();
    for (ci, &n) in config.n_grid.iter().enumerate() {
        for (ti, &tau) in config.tau_grid.iter().enumerate() {
            let cell_tag = (ci * config.tau_grid.len() + ti) as u64;
            let dgp = LinearDgp::new(
                n,
                MvnSpec::diagonal(&vec![1.0; config.k])?,
                config.beta.clone(),
                tau,
                config.noise_sd(),
            )?;
            let space = DesignSpace::complete(n, n / 2)?;
            let total = space.count_u64()?;
            let grid = config.grid_for(total);

            let truth_seed = derive_seed(config.seed, &[cell_tag, 0]);
            let truth_curve =
                true_expected_pvalue_curve(&dgp, &space, &grid, config.truth_mc_iters, truth_seed)?;
            let true_opt = truth_curve.argmin_p_a;

            let selected: Vec<f64> = (0..config.replications)
                .map(|rep| {
                    // The replication's realized covariates, held fixed
                    // inside its selector run.
                    let mut xrng = worker_rng(derive_seed(config.seed, &[cell_tag, 1, rep]), 0);
                    let rows: Vec<Vec<f64>> = (0..n)
                        .map(|_| sample_mvn(&dgp.covariate_spec, &mut xrng))
                        .collect();
                    let x = CovariateMatrix::from_rows(&rows)?;
                    let rep_prior = PriorSpec::new(
                        prior.beta_prior.clone(),
                        prior.tau_prior.clone(),
                        prior.noise_sd,
                        crate::threshold::CovariateModel::Fixed(x),
                    )?;
                    let curve = design_expected_pvalue(
                        &rep_prior,
                        &space,
                        &grid,
                        config.selector_mc_iters,
                        derive_seed(config.seed, &[cell_tag, 2, rep]),
                    )?;
                    Ok(curve.argmin_p_a)
                })
                .collect::<Result<_>>()?;

            let reps = selected.len() as f64;
            let mean_selected = selected.iter().sum::<f64>() / reps;
            let bias = mean_selected - true_opt;
            let rmse = (selected.iter().map(|s| (s - true_opt).powi(2)).sum::<f64>() / reps).sqrt();

            // Uniform-selection baseline over the feasible range (1/total, 1].
            let mut urng = worker_rng(derive_seed(config.seed, &[cell_tag, 3]), 0);
            let lo = 1.0 / total as f64;
            let uniform_rmse = ((0..config.uniform_baseline_draws)
                .map(|_| {
                    let u: f64 = urng.random();
                    let p = lo + (1.0 - lo) * u;
                    (p - true_opt).powi(2)
                })
                .sum::<f64>()
                / config.uniform_baseline_draws as f64)
                .sqrt();

            // Effect-estimate deviation at the median selected p_a vs no
            // rerandomization.
            let median_selected = {
                let mut s = selected.clone();
                s.sort_by(f64::total_cmp);
                s[s.len() / 2]
            };
            let tau_report = tau_sampling_report(
                &OutcomeSource::Dgp(&dgp),
                &space,
                &[median_selected, 1.0],
                config.truth_mc_iters.min(400),
                derive_seed(config.seed, &[cell_tag, 4]),
            )?;

            cells.push(CellReport {
                n,
                tau,
                true_optimal_p_a: true_opt,
                truth_curve: truth_curve.points.clone(),
                mean_selected_p_a: mean_selected,
                selected_p_a: selected,
                bias,
                rmse,
                uniform_rmse,
                relative_rmse: rmse / uniform_rmse,
                tau_dev_at_selected: tau_report[0].mean_abs_rel_dev,
                tau_dev_at_full: tau_report.last().expect("grid nonempty").mean_abs_rel_dev,
            });
        }
    }
    Ok(EvaluationReport {
        cells,
        replications: config.replications,
        seed: config.seed,
    })
}

/// OLS imputation model fit on the full experimental data: outcome on
/// intercept, covariates, and the treatment indicator.
#[derive(Debug, Clone)]
pub struct ImputationModel {
    fit: OlsFit,
    coef_factor: CholeskyFactor,
    x_full: CovariateMatrix,
}

impl ImputationModel {
    pub fn fit(data: &SemiSyntheticData) -> Result<Self> {
        let n = data.n();
        // Design: covariates then the treatment indicator; intercept added
        // by the fitter.
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = data.covariates.values().row(i).to_vec();
                r.push(f64::from(data.arm[i]));
                r
            })
            .collect();
        let design = Matrix::from_rows(&rows)?;
        let fit = ols_fit(&design, &data.outcome, true)?;
        let coef_factor = cholesky(&symmetrize(&fit.xtx_inv))?;
        Ok(Self {
            fit,
            coef_factor,
            x_full: data.covariates.clone(),
        })
    }

    /// [intercept, covariates..., treatment effect].
    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }

    pub fn sigma2(&self) -> f64 {
        self.fit.sigma2
    }

    pub fn coef_cov(&self) -> Matrix {
        self.fit.coef_cov()
    }

    /// The fitted treatment coefficient.
    pub fn tau_hat(&self) -> f64 {
        *self.fit.coefficients.last().expect("fit has coefficients")
    }

    /// Impute complete potential outcomes for `subsample` from one draw of
    /// the coefficient posterior theta ~ N(beta_hat, sigma2 (X'X)^{-1});
    /// covariate profiles stay fixed. Returns (covariates, y0, y1, tau) for
    /// the drawn coefficient vector. With sigma2 = 0 the draw degenerates to
    /// the fitted coefficients exactly.
    pub fn impute(
        &self,
        subsample: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(CovariateMatrix, Vec<f64>, Vec<f64>, f64)> {
        let p = self.fit.coefficients.len();
        let z: Vec<f64> = (0..p).map(|_| standard_normal(rng)).collect();
        let lz = self.coef_factor.mul_lower(&z);
        let sd = self.fit.sigma2.sqrt();
        let theta: Vec<f64> = self
            .fit
            .coefficients
            .iter()
            .zip(&lz)
            .map(|(b, l)| b + sd * l)
            .collect();
        let tau = *theta.last().expect("nonempty");
        let rows: Vec<Vec<f64>> = subsample
            .iter()
            .map(|&i| self.x_full.values().row(i).to_vec())
            .collect();
        let x = CovariateMatrix::from_rows(&rows)?;
        let y0: Vec<f64> = rows
            .iter()
            .map(|r| theta[0] + r.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let y1: Vec<f64> = y0.iter().map(|v| v + tau).collect();
        Ok((x, y0, y1, tau))
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (m.get(i, j) + m.get(j, i)));
        }
    }
    out
}

/// Imputation model plus the subsample it will be evaluated on.
#[derive(Debug, Clone)]
pub struct SemiSynthetic {
    pub model: ImputationModel,
    pub subsample: Vec<usize>,
}

/// Fit the imputation model on the full data and draw a unit subsample:
/// each unit enters independently with probability `fraction` (so the
/// expected subsample size is fraction * n), without replacement.
pub fn semisynthetic_build(
    data: &SemiSyntheticData,
    subsample_fraction: f64,
    seed: u64,
) -> Result<SemiSynthetic> {
    if !(subsample_fraction > 0.0 && subsample_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "subsample fraction must be in (0, 1], got {subsample_fraction}"
        )));
    }
    let n = data.n();
    let k = data.covariates.n_covariates();
    if (n as f64 * subsample_fraction) < (k + 2) as f64 {
        return Err(Error::InsufficientData(format!(
            "expected subsample size {:.1} cannot support a fit with {k} covariates",
            n as f64 * subsample_fraction
        )));
    }
    let model = ImputationModel::fit(data)?;
    let subsample: Vec<usize> = if subsample_fraction == 1.0 {
        (0..n).collect()
    } else {
        let mut rng = worker_rng(seed, 0);
        (0..n)
            .filter(|_| rng.random::<f64>() < subsample_fraction)
            .collect()
    };
    if subsample.len() < k + 2 {
        return Err(Error::InsufficientData(format!(
            "realized subsample has {} units; need at least {}",
            subsample.len(),
            k + 2
        )));
    }
    Ok(SemiSynthetic { model, subsample })
}

/// Expected-p-value curve where each iteration's potential outcomes come
/// from one coefficient draw of the imputation model (the covariate
/// profiles of the subsample stay fixed).
pub fn semisynthetic_design_curve(
    model: &ImputationModel,
    subsample: &[usize],
    space: &DesignSpace,
    p_a_grid: &[f64],
    mc_iters: u64,
    seed: u64,
) -> Result<DesignCurve> {
    if subsample.len() != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            actual: subsample.len(),
        });
    }
    expected_pvalue_curve(space, p_a_grid, mc_iters, seed, |rng| {
        let (x, y0, y1, _tau) = model.impute(subsample, rng)?;
        Ok((x, y0, y1))
    })
}

/// Where potential-outcome tables come from in a sampling report.
pub enum OutcomeSource<'a> {
    Dgp(&'a LinearDgp),
    Imputation {
        model: &'a ImputationModel,
        subsample: &'a [usize],
    },
}

impl OutcomeSource<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<(CovariateMatrix, Vec<f64>, Vec<f64>, f64)> {
        match self {
            OutcomeSource::Dgp(dgp) => {
                let (x, y0, y1) = simulate_potential_outcomes(dgp, rng)?;
                Ok((x, y0, y1, dgp.tau))
            }
            OutcomeSource::Imputation { model, subsample } => model.impute(subsample, rng),
        }
    }
}

/// Sampling behaviour of the effect estimate at one acceptance probability.
#[derive(Debug, Clone, Copy)]
pub struct TauSamplingPoint {
    pub p_a: f64,
    pub mean_tau_hat: f64,
    pub sd_tau_hat: f64,
    /// Mean |tau_hat - tau| / |tau| (absolute deviation when tau is zero).
    pub mean_abs_rel_dev: f64,
}

/// For each p_a: draw a potential-outcome table, accept the top p_a
/// fraction by Mahalanobis score, draw an acceptable assignment, and record
/// the difference-in-means estimate. Common random numbers across the grid.
pub fn tau_sampling_report(
    source: &OutcomeSource<'_>,
    space: &DesignSpace,
    p_a_grid: &[f64],
    mc_iters: u64,
    seed: u64,
) -> Result<Vec<TauSamplingPoint>> {
    if p_a_grid.is_empty() {
        return Err(Error::InvalidConfig("p_a grid is empty".into()));
    }
    for &p in p_a_grid {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("grid value must be in (0, 1], got {p}")));
        }
    }
    if mc_iters == 0 {
        return Err(Error::InvalidConfig("mc_iters must be at least 1".into()));
    }
    let n_candidates = space.count();
    let total = space.count_u64()?;
    let kept_sizes: Vec<usize> = p_a_grid
        .iter()
        .map(|&p| {
            crate::balance::ceil_fraction(&n_candidates, p)
                .to_u64()
                .expect("enumerable space") as usize
        })
        .collect();

    let rows: Vec<Result<Vec<(f64, f64)>>> = (0..mc_iters)
        .into_par_iter()
        .map(|iter| {
            let mut rng = worker_rng(seed, iter);
            let (x, y0, y1, tau) = source.draw(&mut rng)?;
            if x.n_units() != space.n() {
                return Err(Error::DimensionMismatch {
                    expected: space.n(),
                    actual: x.n_units(),
                });
            }
            let member_u: f64 = rng.random();
            let scorer = Scorer::new(space, &x, BalanceMetric::MahalanobisM)?;
            let mut scored: Vec<ScoredCandidate> = Vec::with_capacity(total as usize);
            for (i, w) in crate::randset::enumerate_assignments(space)?.enumerate() {
                scored.push(ScoredCandidate {
                    index: i as u64,
                    score: scorer.score(&w),
                });
            }
            scored.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));

            let mut row = Vec::with_capacity(kept_sizes.len());
            for &m in &kept_sizes {
                let cutoff = scored[m - 1].score;
                let kept = scored.partition_point(|s| s.score <= cutoff);
                let pick = ((member_u * kept as f64) as usize).min(kept - 1);
                let w = space.assignment_at(scored[pick].index)?;
                let y_obs: Vec<f64> = (0..space.n())
                    .map(|i| if w.is_treated(i) { y1[i] } else { y0[i] })
                    .collect();
                row.push((diff_in_means_of(&y_obs, &w), tau));
            }
            Ok(row)
        })
        .collect();

    let collected: Vec<Vec<(f64, f64)>> = rows.into_iter().collect::<Result<_>>()?;
    let iters = mc_iters as f64;
    Ok(p_a_grid
        .iter()
        .enumerate()
        .map(|(i, &p_a)| {
            let mean = collected.iter().map(|r| r[i].0).sum::<f64>() / iters;
            let var = if mc_iters > 1 {
                collected.iter().map(|r| (r[i].0 - mean).powi(2)).sum::<f64>() / (iters - 1.0)
            } else {
                0.0
            };
            let dev = collected
                .iter()
                .map(|r| {
                    let (tau_hat, tau) = r[i];
                    let denom = if tau.abs() > 1e-12 { tau.abs() } else { 1.0 };
                    (tau_hat - tau).abs() / denom
                })
                .sum::<f64>()
                / iters;
            TauSamplingPoint {
                p_a,
                mean_tau_hat: mean,
                sd_tau_hat: var.sqrt(),
                mean_abs_rel_dev: dev,
            }
        })
        .collect())
}
