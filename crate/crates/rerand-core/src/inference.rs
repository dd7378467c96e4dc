//! Exact randomization tests conditioned on an acceptance set, fiducial
//! intervals by test inversion, and waiting-time / uniformity diagnostics.

use std::collections::HashMap;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;

use crate::balance::{ceil_fraction, AcceptanceSet};
use crate::error::{Error, Result};
use crate::numerics::chi2_cdf;
use crate::randset::{sample_assignment, worker_rng, AssignmentVector};

/// Observed outcomes together with the realized assignment.
#[derive(Debug, Clone)]
pub struct OutcomeVector {
    y_obs: Vec<f64>,
    w_obs: AssignmentVector,
}

impl OutcomeVector {
    pub fn new(y_obs: Vec<f64>, w_obs: AssignmentVector) -> Result<Self> {
        if y_obs.len() != w_obs.n() {
            return Err(Error::DimensionMismatch {
                expected: w_obs.n(),
                actual: y_obs.len(),
            });
        }
        for (i, v) in y_obs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data {
                    line: i as u64 + 1,
                    column: "outcome".into(),
                    message: format!("non-finite outcome {v}"),
                });
            }
        }
        Ok(Self { y_obs, w_obs })
    }

    pub fn y_obs(&self) -> &[f64] {
        &self.y_obs
    }

    pub fn w_obs(&self) -> &AssignmentVector {
        &self.w_obs
    }
}

/// Per-group means of `values` under assignment `w`, bucketing every unit in
/// index order. Swapping the groups therefore swaps the two sums bitwise,
/// which keeps complement-pair test statistics exactly tied.
fn group_means(values: &[f64], w: &AssignmentVector) -> (f64, f64) {
    let mut sum_t = 0.0;
    let mut sum_c = 0.0;
    for (i, v) in values.iter().enumerate() {
        if w.is_treated(i) {
            sum_t += v;
        } else {
            sum_c += v;
        }
    }
    let t = w.n_treated() as f64;
    let c = (w.n() - w.n_treated()) as f64;
    (sum_t / t, sum_c / c)
}

/// Difference-in-means ATE estimate: mean(y | treated) - mean(y | control).
pub fn diff_in_means(y: &OutcomeVector) -> f64 {
    diff_in_means_of(&y.y_obs, &y.w_obs)
}

/// Difference in means of arbitrary values under an assignment.
pub fn diff_in_means_of(values: &[f64], w: &AssignmentVector) -> f64 {
    let (mt, mc) = group_means(values, w);
    mt - mc
}

/// Options for the reference-distribution computation.
#[derive(Debug, Clone)]
pub struct TestOptions {
    /// Collect the full multiset of reference estimates in the result.
    pub keep_distribution: bool,
    /// Enumerate all members exactly up to this set size.
    pub max_exact: u64,
    /// Above `max_exact`, evaluate a uniform subsample of this many members.
    pub subsample_size: u64,
    /// Seed for the (rare) subsampled path.
    pub subsample_seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            keep_distribution: false,
            max_exact: 1_000_000,
            subsample_size: 100_000,
            subsample_seed: 0,
        }
    }
}

/// Result of an exact randomization test over an acceptance set.
#[derive(Debug, Clone)]
pub struct RandomizationTestResult {
    pub p_value: f64,
    pub tau_hat: f64,
    pub reference_size: u64,
    pub min_p_value: f64,
    pub statistic_distribution: Option<Vec<f64>>,
    /// True when the reference set was subsampled rather than enumerated.
    pub subsampled: bool,
}

/// Exact two-sided randomization test of H0: tau = tau0 over the acceptance
/// set. The observed assignment is part of the reference set, so the
/// p-value is at least 1/|set|; ties count as "as or more extreme".
pub fn randomization_test(
    y: &OutcomeVector,
    set: &AcceptanceSet,
    tau0: f64,
) -> Result<RandomizationTestResult> {
    randomization_test_with(y, set, tau0, &TestOptions::default())
}

pub fn randomization_test_with(
    y: &OutcomeVector,
    set: &AcceptanceSet,
    tau0: f64,
    opts: &TestOptions,
) -> Result<RandomizationTestResult> {
    let space = set.space();
    if y.y_obs.len() != space.n() {
        return Err(Error::DimensionMismatch {
            expected: space.n(),
            actual: y.y_obs.len(),
        });
    }
    let obs_index = space
        .rank_of(&y.w_obs)
        .map_err(|_| Error::InadmissibleAssignment)?;
    let obs_pos = set
        .member_position(obs_index)
        .ok_or(Error::InadmissibleAssignment)?;

    // Under H0: tau = tau0 the control table is Y(0)* = y - tau0 * w_obs;
    // re-treating with w' adds tau0 back to w'-treated units. The statistic
    // |tau_hat(w') - tau0| then equals |meanT(Y0*) - meanC(Y0*)| under w'.
    let y0: Vec<f64> = y
        .y_obs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if y.w_obs.is_treated(i) {
                v - tau0
            } else {
                *v
            }
        })
        .collect();

    let m = set.len() as u64;
    let (positions, subsampled) = if m <= opts.max_exact {
        ((0..set.len()).collect::<Vec<_>>(), false)
    } else {
        // Uniform subsample of member positions, observed always included.
        let mut chosen = std::collections::HashSet::with_capacity(opts.subsample_size as usize);
        chosen.insert(obs_pos);
        let mut rng = worker_rng(opts.subsample_seed, 0);
        while (chosen.len() as u64) < opts.subsample_size.min(m) {
            chosen.insert(rng.random_range(0..set.len()));
        }
        let mut v: Vec<usize> = chosen.into_iter().collect();
        v.sort_unstable();
        (v, true)
    };

    let obs_w = set.assignment(obs_pos)?;
    let obs_stat = {
        let (mt, mc) = group_means(&y0, &obs_w);
        (mt - mc).abs()
    };

    let chunks: Vec<&[usize]> = positions.chunks(4096.max(positions.len() / 64 + 1)).collect();
    let per_chunk: Vec<Result<(u64, Vec<f64>)>> = chunks
        .into_par_iter()
        .map(|chunk| {
            let mut count = 0u64;
            let mut dist = Vec::new();
            for &pos in chunk {
                let w = set.assignment(pos)?;
                let (mt, mc) = group_means(&y0, &w);
                let diff = mt - mc;
                if diff.abs() >= obs_stat {
                    count += 1;
                }
                if opts.keep_distribution {
                    dist.push(diff + tau0); // tau_hat(w') under H0
                }
            }
            Ok((count, dist))
        })
        .collect();

    let mut extreme = 0u64;
    let mut distribution = opts.keep_distribution.then(Vec::new);
    for r in per_chunk {
        let (c, d) = r?;
        extreme += c;
        if let Some(dist) = distribution.as_mut() {
            dist.extend(d);
        }
    }

    let reference_size = positions.len() as u64;
    Ok(RandomizationTestResult {
        p_value: extreme as f64 / reference_size as f64,
        tau_hat: diff_in_means(y),
        reference_size,
        min_p_value: 1.0 / reference_size as f64,
        statistic_distribution: distribution,
        subsampled,
    })
}

/// Smallest p-value an exact test over `reference_size` randomizations can
/// produce. Panics on zero, which valid acceptance sets rule out.
pub fn minimum_p_value(reference_size: u64) -> f64 {
    assert!(reference_size >= 1, "reference set cannot be empty");
    1.0 / reference_size as f64
}

/// The (p_a, minimum p-value) curve at fixed candidate count:
/// min_p = 1 / ceil(p_a * n_candidates).
pub fn min_p_value_curve(n_candidates: &BigUint, p_a_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(p_a_grid.len());
    for &p_a in p_a_grid {
        if !(p_a > 0.0 && p_a <= 1.0) {
            return Err(Error::Domain(format!("grid value must be in (0, 1], got {p_a}")));
        }
        let kept = ceil_fraction(n_candidates, p_a);
        let min_p = 1.0 / kept.to_f64().unwrap_or(f64::INFINITY);
        out.push((p_a, min_p));
    }
    Ok(out)
}

/// Reference statistics as piecewise-linear functions of tau0.
///
/// For member w', |tau_hat(w') - tau0| = |alpha + beta * tau0| with
/// alpha = meanT(y) - meanC(y) and beta = -(meanT(w) - meanC(w)) under w'.
/// Evaluating one tau0 is O(|set|) with no re-enumeration.
pub(crate) struct PvalueProfile {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    obs_pos: usize,
}

impl PvalueProfile {
    pub(crate) fn build(y: &OutcomeVector, set: &AcceptanceSet) -> Result<Self> {
        let space = set.space();
        let obs_index = space
            .rank_of(&y.w_obs)
            .map_err(|_| Error::InadmissibleAssignment)?;
        let obs_pos = set
            .member_position(obs_index)
            .ok_or(Error::InadmissibleAssignment)?;
        let w_indicator: Vec<f64> = (0..space.n())
            .map(|i| f64::from(u8::from(y.w_obs.is_treated(i))))
            .collect();
        let mut alphas = Vec::with_capacity(set.len());
        let mut betas = Vec::with_capacity(set.len());
        for pos in 0..set.len() {
            let w = set.assignment(pos)?;
            let (yt, yc) = group_means(&y.y_obs, &w);
            let (wt, wc) = group_means(&w_indicator, &w);
            alphas.push(yt - yc);
            betas.push(-(wt - wc));
        }
        Ok(Self {
            alphas,
            betas,
            obs_pos,
        })
    }

    pub(crate) fn p_value(&self, tau0: f64) -> f64 {
        let obs = (self.alphas[self.obs_pos] + self.betas[self.obs_pos] * tau0).abs();
        let extreme = self
            .alphas
            .iter()
            .zip(&self.betas)
            .filter(|(a, b)| (**a + **b * tau0).abs() >= obs)
            .count();
        extreme as f64 / self.alphas.len() as f64
    }

    pub(crate) fn len(&self) -> usize {
        self.alphas.len()
    }
}

/// How fiducial interval endpoints are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    /// Coarse grid expansion followed by bisection to tolerance.
    GridBisection,
    /// Robbins-Monro stochastic approximation with step c/j.
    RobbinsMonro,
}

/// Fiducial interval for a constant additive effect, by test inversion.
#[derive(Debug, Clone)]
pub struct FiducialInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub method: IntervalMethod,
}

impl FiducialInterval {
    pub fn is_infinite(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }
}

#[derive(Debug, Clone)]
pub struct FiducialOptions {
    /// Endpoint tolerance in tau units.
    pub tolerance: f64,
    /// Doublings of the search radius before an endpoint is called infinite.
    pub max_expansions: u32,
    /// Iterations of the Robbins-Monro search per endpoint.
    pub rm_iterations: u64,
    /// Seed for the Robbins-Monro member draws.
    pub seed: u64,
}

impl Default for FiducialOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_expansions: 60,
            rm_iterations: 4000,
            seed: 0,
        }
    }
}

/// Invert the randomization test: the set of tau0 with p(tau0) >= alpha.
///
/// Returns (-inf, +inf) whenever 1/|set| > alpha, since then no tau0 can be
/// rejected at level alpha.
pub fn fiducial_interval(
    y: &OutcomeVector,
    set: &AcceptanceSet,
    alpha: f64,
    method: IntervalMethod,
) -> Result<FiducialInterval> {
    fiducial_interval_with(y, set, alpha, method, &FiducialOptions::default())
}

pub fn fiducial_interval_with(
    y: &OutcomeVector,
    set: &AcceptanceSet,
    alpha: f64,
    method: IntervalMethod,
    opts: &FiducialOptions,
) -> Result<FiducialInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let profile = PvalueProfile::build(y, set)?;
    if minimum_p_value(profile.len() as u64) > alpha {
        return Ok(FiducialInterval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            alpha,
            method,
        });
    }
    let tau_hat = diff_in_means(y);
    let range = {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &y.y_obs {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    };
    let radius = 10.0 * tau_hat.abs() + 10.0 * range;
    if radius == 0.0 {
        // Constant data: tau_hat itself is never rejected.
        return Ok(FiducialInterval {
            lower: tau_hat,
            upper: tau_hat,
            alpha,
            method,
        });
    }

    let (lower, upper) = match method {
        IntervalMethod::GridBisection => {
            let lower = grid_endpoint(&profile, tau_hat, -radius, alpha, opts);
            let upper = grid_endpoint(&profile, tau_hat, radius, alpha, opts);
            (lower, upper)
        }
        IntervalMethod::RobbinsMonro => {
            let lower = robbins_monro_endpoint(&profile, set, tau_hat, -radius, alpha, opts);
            let upper = robbins_monro_endpoint(&profile, set, tau_hat, radius, alpha, opts);
            (lower, upper)
        }
    };
    Ok(FiducialInterval {
        lower,
        upper,
        alpha,
        method,
    })
}

/// Expand from tau_hat until the test rejects; returns the bracketing
/// (last accepted, first rejected) pair, or None when the acceptance region
/// is unbounded on this side within the expansion cap.
fn find_bracket(
    profile: &PvalueProfile,
    tau_hat: f64,
    signed_radius: f64,
    alpha: f64,
    opts: &FiducialOptions,
) -> Option<(f64, f64)> {
    let mut inside = tau_hat; // p(tau_hat) = 1 by construction
    let mut step = signed_radius;
    for _ in 0..=opts.max_expansions {
        let candidate = tau_hat + step;
        if profile.p_value(candidate) < alpha {
            return Some((inside, candidate));
        }
        inside = candidate;
        step *= 2.0;
    }
    None
}

/// One-sided endpoint search: bisect the rejection bracket to tolerance.
fn grid_endpoint(
    profile: &PvalueProfile,
    tau_hat: f64,
    signed_radius: f64,
    alpha: f64,
    opts: &FiducialOptions,
) -> f64 {
    let Some((mut inside, mut outside)) = find_bracket(profile, tau_hat, signed_radius, alpha, opts)
    else {
        return if signed_radius < 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    };
    while (outside - inside).abs() > opts.tolerance {
        let mid = 0.5 * (inside + outside);
        if profile.p_value(mid) >= alpha {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (inside + outside)
}

/// Robbins-Monro endpoint search with step c/j: at iteration j a single
/// member is drawn and the endpoint moves by c_j (z - alpha) / j, where z
/// indicates the drawn statistic was as or more extreme than the observed
/// and c_j scales with the current distance from the point estimate, so the
/// walk self-corrects from a poor start.
fn robbins_monro_endpoint(
    profile: &PvalueProfile,
    set: &AcceptanceSet,
    tau_hat: f64,
    signed_radius: f64,
    alpha: f64,
    opts: &FiducialOptions,
) -> f64 {
    let Some((inside, outside)) = find_bracket(profile, tau_hat, signed_radius, alpha, opts) else {
        return if signed_radius < 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    };
    let stream = if signed_radius < 0.0 { 1 } else { 2 };
    let mut rng = worker_rng(opts.seed, stream);
    // Step-scale constant 2 / (z_{a/2} phi(z_{a/2})) from the search-process
    // literature; z via the one-dof chi-squared quantile.
    let z_half = crate::numerics::chi2_quantile(1.0 - alpha, 1)
        .expect("alpha validated by caller")
        .sqrt();
    let phi = (-0.5 * z_half * z_half).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let k_const = 2.0 / (z_half * phi);
    let floor = (outside - inside).abs() * 1e-6;
    let sign = signed_radius.signum();
    let mut u = 0.5 * (inside + outside);
    for j in 1..=opts.rm_iterations {
        let pos = rng.random_range(0..set.len());
        let obs = (profile.alphas[profile.obs_pos] + profile.betas[profile.obs_pos] * u).abs();
        let z = f64::from(u8::from(
            (profile.alphas[pos] + profile.betas[pos] * u).abs() >= obs,
        ));
        let c = k_const * (u - tau_hat).abs().max(floor);
        u += sign * c / j as f64 * (z - alpha);
        // The endpoint stays on its own side of the point estimate.
        if sign < 0.0 {
            u = u.min(tau_hat - floor);
        } else {
            u = u.max(tau_hat + floor);
        }
    }
    u
}

/// Waiting time until the first acceptable draw at acceptance probability
/// `p_a`: Geometric(p_a), simulated by inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct WaitingTimeStats {
    pub p_a: f64,
    pub draws: u64,
    pub analytic_mean: f64,
    pub sample_mean: f64,
    pub min: u64,
    pub max: u64,
    /// (level, empirical quantile) pairs at 25/50/75/95%.
    pub quantiles: Vec<(f64, f64)>,
}

pub fn waiting_time_stats(p_a: f64, draws: u64, seed: u64) -> Result<WaitingTimeStats> {
    if !(p_a > 0.0 && p_a <= 1.0) {
        return Err(Error::Domain(format!("p_a must be in (0, 1], got {p_a}")));
    }
    if draws == 0 {
        return Err(Error::Domain("need at least one simulated wait".into()));
    }
    let mut rng = worker_rng(seed, 0);
    let log1mp = (-p_a).ln_1p();
    let mut waits: Vec<u64> = (0..draws)
        .map(|_| {
            if p_a == 1.0 {
                1
            } else {
                let u: f64 = rng.random();
                ((1.0 - u).ln() / log1mp).floor() as u64 + 1
            }
        })
        .collect();
    waits.sort_unstable();
    let sample_mean = waits.iter().map(|&w| w as f64).sum::<f64>() / draws as f64;
    let quantiles = [0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|&q| {
            let idx = ((q * draws as f64).ceil() as usize).clamp(1, draws as usize) - 1;
            (q, waits[idx] as f64)
        })
        .collect();
    Ok(WaitingTimeStats {
        p_a,
        draws,
        analytic_mean: 1.0 / p_a,
        sample_mean,
        min: waits[0],
        max: waits[draws as usize - 1],
        quantiles,
    })
}

/// Chi-squared goodness-of-fit report for rejection sampling into a set.
#[derive(Debug, Clone)]
pub struct GofReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub accepted_draws: u64,
    pub total_proposals: u64,
    pub counts: Vec<u64>,
}

/// Rejection-sample uniform candidates, keep those in the acceptance set,
/// and test the accepted counts against the uniform law over members.
pub fn uniformity_check(set: &AcceptanceSet, accepted_draws: u64, seed: u64) -> Result<GofReport> {
    if set.len() > 10_000 {
        return Err(Error::Domain(format!(
            "uniformity check bins at most 10^4 members, got {}",
            set.len()
        )));
    }
    if accepted_draws == 0 {
        return Err(Error::Domain("need at least one accepted draw".into()));
    }
    let space = set.space();
    let by_index: HashMap<u64, usize> = set
        .members()
        .iter()
        .enumerate()
        .map(|(pos, m)| (m.index, pos))
        .collect();
    let mut counts = vec![0u64; set.len()];
    let mut accepted = 0u64;
    let mut proposals = 0u64;
    let mut rng = worker_rng(seed, 0);
    while accepted < accepted_draws {
        proposals += 1;
        let w = sample_assignment(space, &mut rng);
        let idx = space.rank_of(&w).expect("sampled candidate is in the space");
        if let Some(&pos) = by_index.get(&idx) {
            counts[pos] += 1;
            accepted += 1;
        }
    }
    let (statistic, dof, p_value) = if set.len() == 1 {
        (0.0, 0, 1.0) // a single cell is trivially uniform
    } else {
        let expected = accepted_draws as f64 / set.len() as f64;
        let stat: f64 = counts
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        let dof = set.len() - 1;
        (stat, dof, 1.0 - chi2_cdf(stat, dof)?)
    };
    Ok(GofReport {
        statistic,
        dof,
        p_value,
        accepted_draws,
        total_proposals: proposals,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{
        build_acceptance_set, AcceptanceRule, BalanceMetric, CovariateMatrix,
    };
    use crate::randset::DesignSpace;
    use approx::assert_abs_diff_eq;

    fn hours() -> CovariateMatrix {
        CovariateMatrix::from_column(&(1..=8).map(f64::from).collect::<Vec<_>>()).unwrap()
    }

    fn full_set_8_4() -> AcceptanceSet {
        build_acceptance_set(
            &DesignSpace::complete(8, 4).unwrap(),
            &hours(),
            BalanceMetric::AbsMeanDiff,
            AcceptanceRule::TopFraction(1.0),
        )
        .unwrap()
    }

    #[test]
    fn diff_in_means_examples() {
        let w = AssignmentVector::from_bits(&[true, false]).unwrap();
        let y = OutcomeVector::new(vec![1.0, 0.0], w.clone()).unwrap();
        assert_eq!(diff_in_means(&y), 1.0);

        let y_const = OutcomeVector::new(vec![3.0, 3.0], w).unwrap();
        assert_eq!(diff_in_means(&y_const), 0.0);

        let w = AssignmentVector::from_treated_indices(8, &[4, 5, 6, 7]).unwrap();
        let y = OutcomeVector::new((1..=8).map(f64::from).collect(), w).unwrap();
        assert_eq!(diff_in_means(&y), 4.0);
    }

    #[test]
    fn singleton_set_always_returns_p_one() {
        let x = hours();
        let space = DesignSpace::complete(8, 4).unwrap();
        // Top fraction 1/70 keeps the best plus all score ties (the 8
        // perfectly balanced splits), so it is not a singleton.
        let smallest_fraction = build_acceptance_set(
            &space,
            &x,
            BalanceMetric::AbsMeanDiff,
            AcceptanceRule::TopFraction(1.0 / 70.0),
        )
        .unwrap();
        assert_eq!(smallest_fraction.len(), 8);
        // A true singleton comes from the degenerate reduction.
        let one = crate::threshold::optimal_assignment_set(&space, &x, BalanceMetric::AbsMeanDiff)
            .unwrap()
            .0;
        assert_eq!(one.len(), 1);

        let w = one.assignment(0).unwrap();
        let y = OutcomeVector::new(vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0], w).unwrap();
        for tau0 in [-2.0, -0.5, 0.0, 0.3, 10.0] {
            let r = randomization_test(&y, &one, tau0).unwrap();
            assert_eq!(r.p_value, 1.0);
            assert_eq!(r.reference_size, 1);
        }
    }

    #[test]
    fn constant_outcomes_under_sharp_null_give_p_one() {
        let set = full_set_8_4();
        let w = set.assignment(0).unwrap();
        let y = OutcomeVector::new(vec![2.5; 8], w).unwrap();
        let r = randomization_test(&y, &set, 0.0).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    /// Brute-force reference: enumerate all 4-subsets of 8 units by hand and
    /// count extreme statistics directly, independent of the library path.
    fn brute_force_p(y: &[f64], treated_obs: &[usize], tau0: f64) -> f64 {
        fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
            fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == k {
                    out.push(cur.clone());
                    return;
                }
                for v in start..n {
                    cur.push(v);
                    rec(v + 1, n, k, cur, out);
                    cur.pop();
                }
            }
            let mut out = Vec::new();
            rec(0, n, k, &mut Vec::new(), &mut out);
            out
        }
        let n = y.len();
        let y0: Vec<f64> = (0..n)
            .map(|i| {
                if treated_obs.contains(&i) {
                    y[i] - tau0
                } else {
                    y[i]
                }
            })
            .collect();
        let stat = |treated: &[usize]| {
            let (mut st, mut sc) = (0.0, 0.0);
            for (i, v) in y0.iter().enumerate() {
                if treated.contains(&i) {
                    st += v;
                } else {
                    sc += v;
                }
            }
            (st / treated.len() as f64 - sc / (n - treated.len()) as f64).abs()
        };
        let obs = stat(treated_obs);
        let all = subsets(n, treated_obs.len());
        let extreme = all.iter().filter(|t| stat(t) >= obs).count();
        extreme as f64 / all.len() as f64
    }

    #[test]
    fn exact_test_matches_brute_force_oracle() {
        let set = full_set_8_4();
        let y_vals: Vec<f64> = (1..=8).map(f64::from).collect();
        // A perfectly balanced observed assignment.
        let treated = [0usize, 1, 6, 7];
        let w = AssignmentVector::from_treated_indices(8, &treated).unwrap();
        let y = OutcomeVector::new(y_vals.clone(), w).unwrap();
        for tau0 in [0.0, 0.5, -1.0, 2.0] {
            let r = randomization_test(&y, &set, tau0).unwrap();
            assert_eq!(r.p_value, brute_force_p(&y_vals, &treated, tau0), "tau0={tau0}");
            assert!(r.p_value >= r.min_p_value);
            // p * reference_size is an integer count.
            let count = r.p_value * r.reference_size as f64;
            assert_abs_diff_eq!(count, count.round(), epsilon = 1e-9);
        }
    }

    #[test]
    fn inadmissible_assignment_is_rejected() {
        let space = DesignSpace::complete(8, 4).unwrap();
        let set = build_acceptance_set(
            &space,
            &hours(),
            BalanceMetric::AbsMeanDiff,
            AcceptanceRule::Threshold(0.0),
        )
        .unwrap();
        // The worst split is not in the threshold-0 set.
        let w = AssignmentVector::from_treated_indices(8, &[4, 5, 6, 7]).unwrap();
        let y = OutcomeVector::new((1..=8).map(f64::from).collect(), w).unwrap();
        assert!(matches!(
            randomization_test(&y, &set, 0.0),
            Err(Error::InadmissibleAssignment)
        ));
    }

    #[test]
    fn shift_equivariance_of_p_values_and_intervals() {
        let set = full_set_8_4();
        let w = set.assignment(3).unwrap();
        let y_vals = vec![0.3, -1.2, 2.2, 0.9, -0.4, 1.7, 0.1, -2.0];
        let y = OutcomeVector::new(y_vals.clone(), w.clone()).unwrap();
        let shifted = OutcomeVector::new(y_vals.iter().map(|v| v + 100.0).collect(), w).unwrap();
        for tau0 in [-1.0, 0.0, 0.8] {
            let a = randomization_test(&y, &set, tau0).unwrap();
            let b = randomization_test(&shifted, &set, tau0).unwrap();
            assert_eq!(a.p_value, b.p_value, "tau0={tau0}");
        }
        let ia = fiducial_interval(&y, &set, 0.05, IntervalMethod::GridBisection).unwrap();
        let ib = fiducial_interval(&shifted, &set, 0.05, IntervalMethod::GridBisection).unwrap();
        assert_abs_diff_eq!(ia.lower, ib.lower, epsilon = 1e-9);
        assert_abs_diff_eq!(ia.upper, ib.upper, epsilon = 1e-9);
    }

    #[test]
    fn minimum_p_value_known_sizes() {
        assert_abs_diff_eq!(minimum_p_value(70), 1.0 / 70.0, epsilon = 0.0);
        assert_eq!(minimum_p_value(16), 0.0625);
        assert_abs_diff_eq!(minimum_p_value(36), 1.0 / 36.0, epsilon = 0.0);
        assert_eq!(minimum_p_value(1), 1.0);
        // Reported rounded values.
        assert_eq!((minimum_p_value(70) * 1000.0).round() / 1000.0, 0.014);
        assert_eq!((minimum_p_value(16) * 1000.0).round() / 1000.0, 0.063);
        assert_eq!((minimum_p_value(36) * 1000.0).round() / 1000.0, 0.028);
    }

    #[test]
    fn min_p_value_curve_at_known_candidate_count() {
        let n = BigUint::from(252u32);
        let curve = min_p_value_curve(&n, &[1.0 / 252.0, 0.5, 1.0]).unwrap();
        assert_eq!(curve[0].1, 1.0);
        assert_abs_diff_eq!(curve[1].1, 1.0 / 126.0, epsilon = 0.0);
        assert_abs_diff_eq!(curve[2].1, 1.0 / 252.0, epsilon = 0.0);
        // Nonincreasing in p_a.
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let curve = min_p_value_curve(&n, &grid).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].1 <= pair[0].1);
        }
    }

    #[test]
    fn nested_sets_have_monotone_minimum_p_values() {
        let x = hours();
        let space = DesignSpace::complete(8, 4).unwrap();
        let mut prev_min_p = 0.0;
        for p_a in [1.0, 0.5, 0.2, 0.05] {
            let set =
                build_acceptance_set(&space, &x, BalanceMetric::AbsMeanDiff, AcceptanceRule::TopFraction(p_a))
                    .unwrap();
            assert!(set.min_p_value() >= prev_min_p);
            prev_min_p = set.min_p_value();
        }
    }

    #[test]
    fn fiducial_interval_is_infinite_when_min_p_exceeds_alpha() {
        // Paired 4-pair design: 16 candidates, min p = 0.0625 > 0.05.
        let x = hours();
        let space = DesignSpace::paired_adjacent(4).unwrap();
        let set = build_acceptance_set(
            &space,
            &x,
            BalanceMetric::AbsMeanDiff,
            AcceptanceRule::TopFraction(1.0),
        )
        .unwrap();
        assert_eq!(set.len(), 16);
        let w = set.assignment(0).unwrap();
        let y = OutcomeVector::new(vec![1.0, 2.0, 0.5, 1.5, 3.0, 2.5, 0.0, 1.0], w).unwrap();
        let interval = fiducial_interval(&y, &set, 0.05, IntervalMethod::GridBisection).unwrap();
        assert!(interval.is_infinite());
    }

    #[test]
    fn fiducial_interval_matches_dense_grid_oracle() {
        // Additive-shift data: Y(1) = Y(0) + tau exactly, no noise.
        let space = DesignSpace::complete(8, 4).unwrap();
        let set = full_set_8_4();
        let tau = 1.5;
        let y0: Vec<f64> = vec![0.7, -0.3, 1.1, 0.2, -0.9, 0.5, 1.4, -0.1];
        let w = space.assignment_at(17).unwrap();
        let y_obs: Vec<f64> = (0..8)
            .map(|i| y0[i] + if w.is_treated(i) { tau } else { 0.0 })
            .collect();
        let y = OutcomeVector::new(y_obs, w).unwrap();
        let alpha = 0.05;
        let interval = fiducial_interval(&y, &set, alpha, IntervalMethod::GridBisection).unwrap();
        assert!(interval.lower <= tau && tau <= interval.upper);
        assert!(interval.lower <= diff_in_means(&y) && diff_in_means(&y) <= interval.upper);

        // Dense tau0 scan with the direct test as an independent oracle.
        let lo_scan = interval.lower - 0.5;
        let hi_scan = interval.upper + 0.5;
        let steps = 4000;
        let mut accepted: Vec<f64> = Vec::new();
        for i in 0..=steps {
            let tau0 = lo_scan + (hi_scan - lo_scan) * i as f64 / steps as f64;
            if randomization_test(&y, &set, tau0).unwrap().p_value >= alpha {
                accepted.push(tau0);
            }
        }
        let oracle_lower = accepted[0];
        let oracle_upper = *accepted.last().unwrap();
        assert_abs_diff_eq!(interval.lower, oracle_lower, epsilon = 1e-3);
        assert_abs_diff_eq!(interval.upper, oracle_upper, epsilon = 1e-3);

        // Test-inversion duality at the stated tolerance.
        for tau0 in [interval.lower + 0.01, tau, interval.upper - 0.01] {
            assert!(randomization_test(&y, &set, tau0).unwrap().p_value >= alpha);
        }
        for tau0 in [interval.lower - 0.01, interval.upper + 0.01] {
            assert!(randomization_test(&y, &set, tau0).unwrap().p_value < alpha);
        }
    }

    #[test]
    fn robbins_monro_lands_near_the_grid_endpoints() {
        let set = full_set_8_4();
        let w = set.assignment(11).unwrap();
        let y_vals = vec![0.7, -0.3, 1.1, 0.2, -0.9, 0.5, 1.4, -0.1];
        let y = OutcomeVector::new(y_vals, w).unwrap();
        let grid = fiducial_interval(&y, &set, 0.05, IntervalMethod::GridBisection).unwrap();
        let opts = FiducialOptions {
            rm_iterations: 60_000,
            seed: 5,
            ..FiducialOptions::default()
        };
        let rm =
            fiducial_interval_with(&y, &set, 0.05, IntervalMethod::RobbinsMonro, &opts).unwrap();
        assert!(rm.lower <= diff_in_means(&y) && diff_in_means(&y) <= rm.upper);
        let width = grid.upper - grid.lower;
        assert!((rm.lower - grid.lower).abs() < 0.25 * width, "rm={rm:?} grid={grid:?}");
        assert!((rm.upper - grid.upper).abs() < 0.25 * width, "rm={rm:?} grid={grid:?}");
    }

    #[test]
    fn waiting_times_match_the_geometric_law() {
        let all_ones = waiting_time_stats(1.0, 1000, 3).unwrap();
        assert_eq!(all_ones.sample_mean, 1.0);
        assert_eq!(all_ones.min, 1);
        assert_eq!(all_ones.max, 1);

        let tiny = waiting_time_stats(2f64.powi(-20), 10, 3).unwrap();
        assert_eq!(tiny.analytic_mean, 1_048_576.0);
        assert!(tiny.analytic_mean > 1e6);

        let moderate = waiting_time_stats(0.1, 100_000, 3).unwrap();
        assert!(
            (moderate.sample_mean - 10.0).abs() / 10.0 < 0.05,
            "mean={}",
            moderate.sample_mean
        );
    }

    #[test]
    fn uniformity_check_on_the_balanced_set() {
        let set = build_acceptance_set(
            &DesignSpace::complete(8, 4).unwrap(),
            &hours(),
            BalanceMetric::AbsMeanDiff,
            AcceptanceRule::Threshold(0.0),
        )
        .unwrap();
        assert_eq!(set.len(), 8);
        let report = uniformity_check(&set, 20_000, 2).unwrap();
        assert!(report.p_value > 0.01, "GOF p={}", report.p_value);
        assert!(report.total_proposals > report.accepted_draws);

        let (singleton, _) = crate::threshold::optimal_assignment_set(
            &DesignSpace::complete(8, 4).unwrap(),
            &hours(),
            BalanceMetric::AbsMeanDiff,
        )
        .unwrap();
        let trivial = uniformity_check(&singleton, 100, 2).unwrap();
        assert_eq!(trivial.p_value, 1.0);
    }

    #[test]
    fn subsampled_reference_set_keeps_the_observed_assignment() {
        let set = full_set_8_4();
        let w = set.assignment(0).unwrap();
        let y = OutcomeVector::new((1..=8).map(f64::from).collect(), w).unwrap();
        let opts = TestOptions {
            max_exact: 10,
            subsample_size: 30,
            ..TestOptions::default()
        };
        let r = randomization_test_with(&y, &set, 0.0, &opts).unwrap();
        assert!(r.subsampled);
        assert_eq!(r.reference_size, 30);
        assert!(r.p_value >= r.min_p_value);
    }

    #[test]
    fn distribution_is_returned_when_requested() {
        let set = full_set_8_4();
        let w = set.assignment(5).unwrap();
        let y = OutcomeVector::new((1..=8).map(f64::from).collect(), w).unwrap();
        let opts = TestOptions {
            keep_distribution: true,
            ..TestOptions::default()
        };
        let r = randomization_test_with(&y, &set, 0.0, &opts).unwrap();
        let dist = r.statistic_distribution.unwrap();
        assert_eq!(dist.len(), 70);
        // The observed estimate appears in the distribution.
        assert!(dist.contains(&r.tau_hat));
    }
}
