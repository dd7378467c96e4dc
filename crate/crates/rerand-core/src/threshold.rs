//! Acceptance-threshold selection: a-priori minimum-p-value inversion,
//! heuristic lambda tradeoff, prior-informed expected-p-value minimization,
//! and the degenerate single-assignment reduction.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::balance::{
    ceil_fraction, score_all, AcceptanceSet, BalanceMetric, CovariateMatrix, ScoreSummary,
    ScoredCandidate, VarianceMode,
};
use crate::error::{Error, Result};
use crate::inference::{diff_in_means_of, minimum_p_value};
use crate::numerics::{sample_mvn, standard_normal, MvnSpec};
use crate::randset::{worker_rng, DesignSpace};
use rand::Rng;

/// Prior over the constant treatment effect.
#[derive(Debug, Clone)]
pub enum TauPrior {
    PointMass(f64),
    Gaussian { mean: f64, sd: f64 },
}

impl TauPrior {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            TauPrior::PointMass(v) => *v,
            TauPrior::Gaussian { mean, sd } => mean + sd * standard_normal(rng),
        }
    }

    fn validate(&self) -> Result<()> {
        if let TauPrior::Gaussian { sd, .. } = self {
            if *sd < 0.0 {
                return Err(Error::InvalidConfig(format!("tau prior sd must be nonnegative, got {sd}")));
            }
        }
        Ok(())
    }
}

/// Where the covariates come from inside the design simulation.
#[derive(Debug, Clone)]
pub enum CovariateModel {
    /// The realized covariate table, held fixed across iterations.
    Fixed(CovariateMatrix),
    /// Rows drawn iid from a multivariate normal each iteration.
    Mvn(MvnSpec),
}

/// Prior design information: distributions over outcome coefficients, the
/// treatment effect, the noise scale, and the covariates.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub beta_prior: MvnSpec,
    pub tau_prior: TauPrior,
    pub noise_sd: f64,
    pub covariate_model: CovariateModel,
}

impl PriorSpec {
    pub fn new(
        beta_prior: MvnSpec,
        tau_prior: TauPrior,
        noise_sd: f64,
        covariate_model: CovariateModel,
    ) -> Result<Self> {
        if noise_sd < 0.0 {
            return Err(Error::InvalidConfig(format!("noise sd must be nonnegative, got {noise_sd}")));
        }
        tau_prior.validate()?;
        let k = match &covariate_model {
            CovariateModel::Fixed(x) => x.n_covariates(),
            CovariateModel::Mvn(spec) => spec.dim(),
        };
        if beta_prior.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: beta_prior.dim(),
            });
        }
        Ok(Self {
            beta_prior,
            tau_prior,
            noise_sd,
            covariate_model,
        })
    }

    /// Weakly informative default: beta and tau centered at zero with sd 10
    /// per coefficient.
    pub fn noninformative(covariate_model: CovariateModel, noise_sd: f64) -> Result<Self> {
        let k = match &covariate_model {
            CovariateModel::Fixed(x) => x.n_covariates(),
            CovariateModel::Mvn(spec) => spec.dim(),
        };
        let beta_prior = MvnSpec::diagonal(&vec![100.0; k])?;
        Self::new(
            beta_prior,
            TauPrior::Gaussian { mean: 0.0, sd: 10.0 },
            noise_sd,
            covariate_model,
        )
    }

    pub fn k(&self) -> usize {
        self.beta_prior.dim()
    }
}

/// Result of inverting the minimum-p-value formula for a target level.
#[derive(Debug, Clone)]
pub struct AprioriChoice {
    pub p_a: f64,
    pub reference_size: u64,
    pub min_p_value: f64,
}

/// Smallest acceptance probability whose minimum p-value still meets
/// `beta_target`: reference_size = ceil(1 / beta), p_a = size / n_candidates.
pub fn apriori_p_a(beta_target: f64, n_candidates: &BigUint) -> Result<AprioriChoice> {
    if !(beta_target > 0.0 && beta_target <= 1.0) {
        return Err(Error::Domain(format!("beta target must be in (0, 1], got {beta_target}")));
    }
    let mut reference_size = (1.0 / beta_target).ceil() as u64;
    // Land exactly on the smallest size whose minimum p-value is <= beta,
    // stepping around floating-point noise in 1/beta.
    while reference_size > 1 && minimum_p_value(reference_size - 1) <= beta_target {
        reference_size -= 1;
    }
    while minimum_p_value(reference_size) > beta_target {
        reference_size += 1;
    }
    if BigUint::from(reference_size) > *n_candidates {
        return Err(Error::InfeasibleTarget {
            smallest_achievable: 1.0 / n_candidates.to_f64().unwrap_or(f64::INFINITY),
            n_candidates: n_candidates.clone(),
        });
    }
    let p_a = reference_size as f64 / n_candidates.to_f64().unwrap_or(f64::INFINITY);
    Ok(AprioriChoice {
        p_a,
        reference_size,
        min_p_value: minimum_p_value(reference_size),
    })
}

/// One point of the heuristic objective curve.
#[derive(Debug, Clone, Copy)]
pub struct ObjectivePoint {
    pub p_a: f64,
    pub min_p: f64,
    pub variance_remaining: f64,
    pub objective: f64,
}

/// The chosen p_a and the full objective curve it minimizes.
#[derive(Debug, Clone)]
pub struct HeuristicChoice {
    pub p_a_star: f64,
    pub objective_star: f64,
    pub curve: Vec<ObjectivePoint>,
}

pub const DEFAULT_OBJECTIVE_GRID: usize = 512;

/// Log-spaced grid over feasible acceptance probabilities [1/n, 1].
pub fn feasible_p_a_grid(n_candidates: &BigUint, points: usize) -> Vec<f64> {
    let n = n_candidates.to_f64().unwrap_or(f64::INFINITY);
    let lo = (1.0 / n).ln();
    let mut grid: Vec<f64> = (0..points)
        .map(|i| {
            if i == 0 {
                1.0 / n
            } else if i == points - 1 {
                1.0
            } else {
                (lo + (0.0 - lo) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn objective_curve(
    k: usize,
    n_candidates: &BigUint,
    v_mode: &VarianceMode<'_>,
    grid: &[f64],
) -> Result<Vec<ObjectivePoint>> {
    let summary = match v_mode {
        VarianceMode::Empirical { space, x, metric } => {
            Some(ScoreSummary::build(space, x, *metric)?)
        }
        VarianceMode::Analytic => None,
    };
    grid.iter()
        .map(|&p_a| {
            let kept = ceil_fraction(n_candidates, p_a);
            let min_p = 1.0 / kept.to_f64().unwrap_or(f64::INFINITY);
            let v = match &summary {
                Some(s) => s.v_at(p_a),
                None => crate::balance::variance_remaining(p_a, k, VarianceMode::Analytic)?,
            };
            Ok(ObjectivePoint {
                p_a,
                min_p,
                variance_remaining: v,
                // objective filled by the caller, which knows lambda
                objective: f64::NAN,
            })
        })
        .collect()
}

/// Minimize lambda * min_p(p_a) + (1 - lambda) * v(p_a) over a dense grid of
/// feasible p_a. Both components lie in [0, 1]. Ties break toward the larger
/// p_a (the less restrictive design).
pub fn heuristic_p_a(
    lambda: f64,
    k: usize,
    n_candidates: &BigUint,
    v_mode: VarianceMode<'_>,
    grid_points: usize,
) -> Result<HeuristicChoice> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let grid = feasible_p_a_grid(n_candidates, grid_points.max(2));
    let mut curve = objective_curve(k, n_candidates, &v_mode, &grid)?;
    for pt in curve.iter_mut() {
        pt.objective = lambda * pt.min_p + (1.0 - lambda) * pt.variance_remaining;
    }
    let mut best = 0usize;
    for i in 1..curve.len() {
        if curve[i].objective <= curve[best].objective {
            best = i;
        }
    }
    let star = curve[best];
    Ok(HeuristicChoice {
        p_a_star: star.p_a,
        objective_star: star.objective,
        curve,
    })
}

/// The set of lambda values for which the heuristic would choose
/// `p_a_chosen` (snapped to its grid point). The argmin is piecewise
/// constant in lambda, so the answer is an interval, possibly empty.
pub fn implied_lambda(
    p_a_chosen: f64,
    k: usize,
    n_candidates: &BigUint,
    v_mode: VarianceMode<'_>,
    grid_points: usize,
) -> Result<Option<(f64, f64)>> {
    let grid = feasible_p_a_grid(n_candidates, grid_points.max(2));
    let curve = objective_curve(k, n_candidates, &v_mode, &grid)?;
    // Snap to the nearest grid point.
    let chosen = curve
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (a.p_a - p_a_chosen)
                .abs()
                .total_cmp(&(b.p_a - p_a_chosen).abs())
        })
        .map(|(i, _)| i)
        .expect("grid is nonempty");

    // f(lambda, i) = v_i + lambda (e_i - v_i). The chosen point wins iff
    // f(chosen) <= f(j) for j below it and f(chosen) < f(j) above it
    // (matching the larger-p_a tie rule). Each comparison is linear in
    // lambda, so the feasible set is an interval.
    let (e_c, v_c) = (curve[chosen].min_p, curve[chosen].variance_remaining);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (j, pt) in curve.iter().enumerate() {
        if j == chosen {
            continue;
        }
        let a = (e_c - pt.min_p) - (v_c - pt.variance_remaining);
        let b = v_c - pt.variance_remaining;
        // Need b + lambda * a <= 0 (strictly when j > chosen and the lines
        // actually differ; the closed approximation is fine at grid scale).
        if a == 0.0 {
            if b > 0.0 || (b == 0.0 && j > chosen) {
                return Ok(None);
            }
        } else {
            let boundary = -b / a;
            if a > 0.0 {
                hi = hi.min(boundary);
            } else {
                lo = lo.max(boundary);
            }
        }
        if lo > hi {
            return Ok(None);
        }
    }
    Ok(Some((lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))))
}

/// One grid point of an expected-p-value design curve.
#[derive(Debug, Clone, Copy)]
pub struct DesignPoint {
    pub p_a: f64,
    pub expected_p_value: f64,
    pub mc_std_error: f64,
}

/// Expected-p-value curve over a p_a grid, with its minimizer.
#[derive(Debug, Clone)]
pub struct DesignCurve {
    pub points: Vec<DesignPoint>,
    pub argmin_p_a: f64,
    pub mc_iters: u64,
    pub warnings: Vec<String>,
}

impl DesignCurve {
    pub fn argmin_point(&self) -> &DesignPoint {
        self.points
            .iter()
            .find(|p| p.p_a == self.argmin_p_a)
            .expect("argmin is a grid point")
    }
}

/// Monte-Carlo engine shared by the prior-informed selector and the
/// true-optimum evaluator: `draw` produces one potential-outcome table per
/// iteration; the same draw (and the same member-selection uniform) is
/// reused across every grid point.
pub(crate) fn expected_pvalue_curve<F>(
    space: &DesignSpace,
    p_a_grid: &[f64],
    mc_iters: u64,
    seed: u64,
    draw: F,
) -> Result<DesignCurve>
where
    F: Fn(&mut ChaCha8Rng) -> Result<(CovariateMatrix, Vec<f64>, Vec<f64>)> + Sync,
{
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

    let mut grid = p_a_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let kept_sizes: Vec<usize> = grid
        .iter()
        .map(|&p| {
            ceil_fraction(&n_candidates, p)
                .to_u64()
                .expect("enumerable space") as usize
        })
        .collect();

    // One row of p-values per iteration, in iteration order, so the final
    // reduction is identical no matter how iterations were scheduled.
    let rows: Vec<Result<Vec<f64>>> = (0..mc_iters)
        .into_par_iter()
        .map(|iter| {
            let mut rng = worker_rng(seed, iter);
            let (x, y0, y1) = draw(&mut rng)?;
            if x.n_units() != space.n() {
                return Err(Error::DimensionMismatch {
                    expected: space.n(),
                    actual: x.n_units(),
                });
            }
            let member_u: f64 = rng.random();

            let scorer =
                crate::balance::Scorer::new(space, &x, BalanceMetric::MahalanobisM)?;
            let mut scored: Vec<ScoredCandidate> = Vec::with_capacity(total as usize);
            for (i, w) in crate::randset::enumerate_assignments(space)?.enumerate() {
                scored.push(ScoredCandidate {
                    index: i as u64,
                    score: scorer.score(&w),
                });
            }
            scored.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));

            let mut row = Vec::with_capacity(grid.len());
            for &m in &kept_sizes {
                // Boundary ties expand the kept set, mirroring acceptance
                // set construction.
                let cutoff = scored[m - 1].score;
                let kept = scored.partition_point(|s| s.score <= cutoff);
                let members = &scored[..kept];

                let pick = ((member_u * kept as f64) as usize).min(kept - 1);
                let w_obs = space.assignment_at(members[pick].index)?;
                let y_obs: Vec<f64> = (0..space.n())
                    .map(|i| if w_obs.is_treated(i) { y1[i] } else { y0[i] })
                    .collect();
                let obs_stat = diff_in_means_of(&y_obs, &w_obs).abs();

                let mut extreme = 0usize;
                for member in members {
                    let w = space.assignment_at(member.index)?;
                    if diff_in_means_of(&y_obs, &w).abs() >= obs_stat {
                        extreme += 1;
                    }
                }
                row.push(extreme as f64 / kept as f64);
            }
            Ok(row)
        })
        .collect();

    let collected: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let iters = mc_iters as f64;
    let points: Vec<DesignPoint> = grid
        .iter()
        .enumerate()
        .map(|(i, &p_a)| {
            let mean = collected.iter().map(|r| r[i]).sum::<f64>() / iters;
            let se = if mc_iters > 1 {
                let var =
                    collected.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (iters - 1.0);
                (var / iters).sqrt()
            } else {
                0.0
            };
            DesignPoint {
                p_a,
                expected_p_value: mean,
                mc_std_error: se,
            }
        })
        .collect();

    let mut best = 0usize;
    for i in 1..points.len() {
        if points[i].expected_p_value <= points[best].expected_p_value {
            best = i;
        }
    }
    Ok(DesignCurve {
        argmin_p_a: points[best].p_a,
        points,
        mc_iters,
        warnings: Vec::new(),
    })
}

/// Expected p-value of the tau0 = 0 exact test at each grid p_a, averaging
/// over the prior: draw (X, beta, tau, noise), accept the top p_a fraction
/// by Mahalanobis score, draw the realized assignment uniformly from the
/// acceptance set, and test. Deterministic given the seed; iterations use
/// common random numbers across grid points.
pub fn design_expected_pvalue(
    prior: &PriorSpec,
    space: &DesignSpace,
    p_a_grid: &[f64],
    mc_iters: u64,
    seed: u64,
) -> Result<DesignCurve> {
    if let CovariateModel::Fixed(x) = &prior.covariate_model {
        if x.n_units() != space.n() {
            return Err(Error::DimensionMismatch {
                expected: space.n(),
                actual: x.n_units(),
            });
        }
    }
    let n = space.n();
    expected_pvalue_curve(space, p_a_grid, mc_iters, seed, |rng| {
        // Fixed draw order: covariates, beta, tau, control noise, treated
        // noise. The engine draws the member selector afterwards.
        let x = match &prior.covariate_model {
            CovariateModel::Fixed(x) => x.clone(),
            CovariateModel::Mvn(spec) => {
                let rows: Vec<Vec<f64>> = (0..n).map(|_| sample_mvn(spec, rng)).collect();
                CovariateMatrix::from_rows(&rows)?
            }
        };
        let beta = sample_mvn(&prior.beta_prior, rng);
        let tau = prior.tau_prior.draw(rng);
        let xb: Vec<f64> = (0..n)
            .map(|i| {
                x.values()
                    .row(i)
                    .iter()
                    .zip(&beta)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let y0: Vec<f64> = xb
            .iter()
            .map(|v| v + prior.noise_sd * standard_normal(rng))
            .collect();
        let y1: Vec<f64> = xb
            .iter()
            .map(|v| tau + v + prior.noise_sd * standard_normal(rng))
            .collect();
        Ok((x, y0, y1))
    })
}

/// The acceptance set containing only the best-balanced assignment (ties
/// broken by lowest enumeration index); returns the set and the tie count.
pub fn optimal_assignment_set(
    space: &DesignSpace,
    x: &CovariateMatrix,
    metric: BalanceMetric,
) -> Result<(AcceptanceSet, u64)> {
    let total = space.count_u64()?;
    let (best, ties) = if total <= crate::balance::DEFAULT_MEMORY_BUDGET {
        let scored = score_all(space, x, metric)?;
        let best = scored
            .iter()
            .copied()
            .min_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)))
            .expect("candidate set is nonempty");
        let ties = scored.iter().filter(|s| s.score == best.score).count() as u64;
        (best, ties)
    } else {
        let mut stream = crate::balance::score_stream(space, x, metric)?;
        let first = stream.next().expect("candidate set is nonempty");
        let mut best = first;
        let mut ties = 1u64;
        for s in stream {
            if s.score < best.score {
                best = s;
                ties = 1;
            } else if s.score == best.score {
                ties += 1;
            }
        }
        (best, ties)
    };
    let set = AcceptanceSet::from_members(
        space.clone(),
        metric,
        best.score,
        vec![best],
        space.count(),
    );
    Ok((set, ties))
}
