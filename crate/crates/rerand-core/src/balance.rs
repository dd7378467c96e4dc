//! Covariate balance scores (absolute mean difference and Mahalanobis M)
//! and acceptance sets built by threshold or acceptance probability.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{self, chi2_cdf, chi2_quantile, CholeskyFactor, Matrix, SymmetricPd};
use crate::randset::{AssignmentVector, DesignSpace};

/// n x k matrix of pre-treatment covariates; finite entries, n >= 2, k >= 1.
#[derive(Debug, Clone)]
pub struct CovariateMatrix {
    values: Matrix,
}

impl CovariateMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::InsufficientData(format!(
                "covariate matrix needs at least 2 units, got {}",
                values.rows()
            )));
        }
        if values.cols() == 0 {
            return Err(Error::InsufficientData("covariate matrix needs at least one column".into()));
        }
        for i in 0..values.rows() {
            for (j, v) in values.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data {
                        line: i as u64 + 1,
                        column: format!("covariate {j}"),
                        message: format!("non-finite entry {v}"),
                    });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Single-covariate matrix from a column of values.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Self::from_rows(&rows)
    }

    pub fn n_units(&self) -> usize {
        self.values.rows()
    }

    pub fn n_covariates(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Which balance score a design uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceMetric {
    /// |mean(treated) - mean(control)| of a single covariate.
    AbsMeanDiff,
    /// Mahalanobis distance between group covariate means,
    /// M = n p (1-p) d' Cov(x)^{-1} d.
    MahalanobisM,
}

/// One candidate's position in enumeration order and its balance score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub index: u64,
    pub score: f64,
}

/// Absolute difference in covariate means between treated and control.
pub fn abs_mean_diff(x: &CovariateMatrix, w: &AssignmentVector) -> Result<f64> {
    if x.n_covariates() != 1 {
        return Err(Error::MetricMismatch(format!(
            "abs_mean_diff requires exactly one covariate, got {}",
            x.n_covariates()
        )));
    }
    let scorer = Scorer::new_for_assignment(x, w.n(), w.n_treated(), BalanceMetric::AbsMeanDiff)?;
    Ok(scorer.score(w))
}

/// Mahalanobis balance score M = n p (1-p) d' Cov^{-1} d for d = X_T - X_C,
/// using a covariance factor computed once by the caller.
pub fn mahalanobis_m(
    x: &CovariateMatrix,
    w: &AssignmentVector,
    cov_factor: &CholeskyFactor,
) -> Result<f64> {
    if cov_factor.dim() != x.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: x.n_covariates(),
            actual: cov_factor.dim(),
        });
    }
    if w.n() != x.n_units() {
        return Err(Error::DimensionMismatch {
            expected: x.n_units(),
            actual: w.n(),
        });
    }
    let scorer = Scorer {
        x,
        n: w.n(),
        metric: BalanceMetric::MahalanobisM,
        col_sums: column_sums(x),
        factor: Some(cov_factor.clone()),
        canonicalize: 2 * w.n_treated() == w.n(),
    };
    Ok(scorer.score(w))
}

/// Factor the full-sample covariance of `x` for reuse across candidates.
///
/// Degenerate covariates (zero variance, collinearity) are a hard error.
pub fn covariance_factor(x: &CovariateMatrix) -> Result<CholeskyFactor> {
    let cov = numerics::sample_covariance(x.values())?;
    let spd = SymmetricPd::new(cov)?;
    Ok(spd.factor().clone())
}

fn column_sums(x: &CovariateMatrix) -> Vec<f64> {
    let k = x.n_covariates();
    let mut sums = vec![0.0; k];
    for i in 0..x.n_units() {
        for (s, v) in sums.iter_mut().zip(x.values().row(i)) {
            *s += v;
        }
    }
    sums
}

/// Precomputed scoring state shared across candidates (and across worker
/// threads; it is read-only after construction).
pub struct Scorer<'a> {
    x: &'a CovariateMatrix,
    n: usize,
    metric: BalanceMetric,
    col_sums: Vec<f64>,
    factor: Option<CholeskyFactor>,
    canonicalize: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(space: &DesignSpace, x: &'a CovariateMatrix, metric: BalanceMetric) -> Result<Self> {
        Self::new_for_assignment(x, space.n(), space.n_treated(), metric)
    }

    fn new_for_assignment(
        x: &'a CovariateMatrix,
        n: usize,
        n_treated: usize,
        metric: BalanceMetric,
    ) -> Result<Self> {
        if x.n_units() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: x.n_units(),
            });
        }
        if metric == BalanceMetric::AbsMeanDiff && x.n_covariates() != 1 {
            return Err(Error::MetricMismatch(format!(
                "abs_mean_diff requires exactly one covariate, got {}",
                x.n_covariates()
            )));
        }
        let factor = match metric {
            BalanceMetric::MahalanobisM => Some(covariance_factor(x)?),
            BalanceMetric::AbsMeanDiff => None,
        };
        Ok(Self {
            x,
            n,
            metric,
            col_sums: column_sums(x),
            factor,
            // Complement pairs share the statistic exactly; canonicalizing on
            // the unit-0 bit makes them share it bitwise, so boundary ties
            // between a candidate and its group swap are exact.
            canonicalize: 2 * n_treated == n,
        })
    }

    /// Balance score of one candidate.
    pub fn score(&self, w: &AssignmentVector) -> f64 {
        if self.canonicalize && !w.is_treated(0) {
            return self.score_raw(&w.complement());
        }
        self.score_raw(w)
    }

    fn score_raw(&self, w: &AssignmentVector) -> f64 {
        let k = self.x.n_covariates();
        let t = w.n_treated() as f64;
        let c = (self.n - w.n_treated()) as f64;
        let mut treated_sums = vec![0.0; k];
        for i in w.treated_indices() {
            for (s, v) in treated_sums.iter_mut().zip(self.x.values().row(i)) {
                *s += v;
            }
        }
        let d: Vec<f64> = treated_sums
            .iter()
            .zip(&self.col_sums)
            .map(|(st, sa)| st / t - (sa - st) / c)
            .collect();
        match self.metric {
            BalanceMetric::AbsMeanDiff => d[0].abs(),
            BalanceMetric::MahalanobisM => {
                let scale = t * c / self.n as f64; // n p (1-p)
                scale
                    * self
                        .factor
                        .as_ref()
                        .expect("mahalanobis scorer always has a factor")
                        .inv_quadratic_form(&d)
            }
        }
    }
}

/// Score every candidate in enumeration order, streaming.
pub fn score_stream<'a>(
    space: &'a DesignSpace,
    x: &'a CovariateMatrix,
    metric: BalanceMetric,
) -> Result<impl Iterator<Item = ScoredCandidate> + 'a> {
    let scorer = Scorer::new(space, x, metric)?;
    let stream = crate::randset::enumerate_assignments(space)?;
    Ok(stream.enumerate().map(move |(i, w)| ScoredCandidate {
        index: i as u64,
        score: scorer.score(&w),
    }))
}

/// Score every candidate in parallel; output order matches enumeration
/// order exactly regardless of worker count.
pub fn score_all(
    space: &DesignSpace,
    x: &CovariateMatrix,
    metric: BalanceMetric,
) -> Result<Vec<ScoredCandidate>> {
    let scorer = Scorer::new(space, x, metric)?;
    let total = space.count_u64()?;
    let ranges = split_ranges(total, rayon::current_num_threads() as u64 * 4);
    let parts: Vec<Result<Vec<ScoredCandidate>>> = ranges
        .into_par_iter()
        .map(|(start, end)| {
            let mut out = Vec::with_capacity((end - start) as usize);
            for (off, w) in space.enumerate_range(start, end)?.enumerate() {
                out.push(ScoredCandidate {
                    index: start + off as u64,
                    score: scorer.score(&w),
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(total as usize);
    for part in parts {
        all.extend(part?);
    }
    Ok(all)
}

fn split_ranges(total: u64, want: u64) -> Vec<(u64, u64)> {
    if total == 0 {
        return vec![(0, 0)];
    }
    let chunks = want.clamp(1, total);
    let size = total.div_ceil(chunks);
    (0..chunks)
        .map(|i| (i * size, ((i + 1) * size).min(total)))
        .filter(|(s, e)| s < e)
        .collect()
}

/// ceil(p * n) computed exactly from the binary representation of p.
pub(crate) fn ceil_fraction(n: &BigUint, p: f64) -> BigUint {
    debug_assert!(p > 0.0 && p <= 1.0);
    let bits = p.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if raw_exp == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1 << 52), raw_exp - 1075)
    };
    let prod = n * BigUint::from(mant);
    let m = if exp >= 0 {
        prod << (exp as u64)
    } else {
        let shift = (-exp) as u64;
        let floor = &prod >> shift;
        if &floor << shift == prod {
            floor
        } else {
            floor + BigUint::one()
        }
    };
    m.clamp(BigUint::one(), n.clone())
}

/// How members are selected into an acceptance set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcceptanceRule {
    /// Keep the best ceil(p_a * n_candidates) candidates plus boundary ties.
    TopFraction(f64),
    /// Keep every candidate with score <= a.
    Threshold(f64),
}

/// The reduced set of acceptable assignments, with its realized acceptance
/// probability. Members hold enumeration indices, not bit vectors.
#[derive(Debug, Clone)]
pub struct AcceptanceSet {
    space: DesignSpace,
    metric: BalanceMetric,
    threshold_a: f64,
    realized_p_a: f64,
    members: Vec<ScoredCandidate>,
    n_candidates: BigUint,
}

impl AcceptanceSet {
    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn metric(&self) -> BalanceMetric {
        self.metric
    }

    /// The worst score admitted (the acceptance threshold a).
    pub fn threshold_a(&self) -> f64 {
        self.threshold_a
    }

    /// |members| / n_candidates.
    pub fn realized_p_a(&self) -> f64 {
        self.realized_p_a
    }

    /// Members sorted ascending by (score, enumeration index).
    pub fn members(&self) -> &[ScoredCandidate] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    // Construction guarantees at least one member.
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_candidates(&self) -> &BigUint {
        &self.n_candidates
    }

    /// 1 / |members|.
    pub fn min_p_value(&self) -> f64 {
        1.0 / self.members.len() as f64
    }

    /// Position of the member with enumeration index `index`, if present.
    pub fn member_position(&self, index: u64) -> Option<usize> {
        self.members.iter().position(|m| m.index == index)
    }

    /// The assignment vector of member `pos`.
    pub fn assignment(&self, pos: usize) -> Result<AssignmentVector> {
        self.space.assignment_at(self.members[pos].index)
    }

    pub(crate) fn from_members(
        space: DesignSpace,
        metric: BalanceMetric,
        threshold_a: f64,
        mut members: Vec<ScoredCandidate>,
        n_candidates: BigUint,
    ) -> Self {
        members.sort_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then(a.index.cmp(&b.index))
        });
        let realized = members.len() as f64 / n_candidates.to_f64().unwrap_or(f64::INFINITY);
        Self {
            space,
            metric,
            threshold_a,
            realized_p_a: realized,
            members,
            n_candidates,
        }
    }
}

/// Default build memory budget: candidate spaces up to this size are scored
/// into memory in one pass; larger spaces use two streaming passes.
pub const DEFAULT_MEMORY_BUDGET: u64 = 10_000_000;

/// Build an acceptance set under `rule`.
pub fn build_acceptance_set(
    space: &DesignSpace,
    x: &CovariateMatrix,
    metric: BalanceMetric,
    rule: AcceptanceRule,
) -> Result<AcceptanceSet> {
    build_acceptance_set_with_budget(space, x, metric, rule, DEFAULT_MEMORY_BUDGET)
}

/// As [`build_acceptance_set`], with an explicit candidate-count budget for
/// the in-memory path.
pub fn build_acceptance_set_with_budget(
    space: &DesignSpace,
    x: &CovariateMatrix,
    metric: BalanceMetric,
    rule: AcceptanceRule,
    budget: u64,
) -> Result<AcceptanceSet> {
    match rule {
        AcceptanceRule::TopFraction(p_a) => {
            if !(p_a > 0.0 && p_a <= 1.0) {
                return Err(Error::Domain(format!("acceptance probability must be in (0, 1], got {p_a}")));
            }
        }
        AcceptanceRule::Threshold(a) => {
            if a.is_nan() || a < 0.0 {
                return Err(Error::Domain(format!("acceptance threshold must be nonnegative, got {a}")));
            }
        }
    }
    let n_candidates = space.count();
    let total = space.count_u64()?;

    if total <= budget {
        let mut scored = score_all(space, x, metric)?;
        let members = match rule {
            AcceptanceRule::Threshold(a) => {
                let members: Vec<ScoredCandidate> =
                    scored.iter().copied().filter(|s| s.score <= a).collect();
                if members.is_empty() {
                    let min_score = scored
                        .iter()
                        .map(|s| s.score)
                        .fold(f64::INFINITY, f64::min);
                    return Err(Error::EmptyAcceptanceSet { threshold: a, min_score });
                }
                members
            }
            AcceptanceRule::TopFraction(p_a) => {
                let m = ceil_fraction(&n_candidates, p_a)
                    .to_u64()
                    .expect("kept count fits u64 when the total does") as usize;
                scored.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));
                let cutoff = scored[m - 1].score;
                let end = scored.partition_point(|s| s.score <= cutoff);
                scored.truncate(end);
                scored
            }
        };
        let threshold_a = match rule {
            AcceptanceRule::Threshold(a) => a,
            AcceptanceRule::TopFraction(_) => members
                .iter()
                .map(|s| s.score)
                .fold(f64::NEG_INFINITY, f64::max),
        };
        Ok(AcceptanceSet::from_members(
            space.clone(),
            metric,
            threshold_a,
            members,
            n_candidates,
        ))
    } else {
        build_streaming(space, x, metric, rule, n_candidates, total)
    }
}

/// Two-pass path for spaces too large to score into memory: pass one finds
/// the cutoff score, pass two collects members at or below it.
fn build_streaming(
    space: &DesignSpace,
    x: &CovariateMatrix,
    metric: BalanceMetric,
    rule: AcceptanceRule,
    n_candidates: BigUint,
    total: u64,
) -> Result<AcceptanceSet> {
    let scorer = Scorer::new(space, x, metric)?;
    let cutoff = match rule {
        AcceptanceRule::Threshold(a) => a,
        AcceptanceRule::TopFraction(p_a) => {
            let m = ceil_fraction(&n_candidates, p_a)
                .to_u64()
                .expect("kept count fits u64 when the total does") as usize;
            // Bounded max-heaps per range, merged to find the m-th smallest.
            let ranges = split_ranges(total, rayon::current_num_threads() as u64 * 4);
            let heaps: Vec<Result<Vec<f64>>> = ranges
                .into_par_iter()
                .map(|(start, end)| {
                    let mut heap: std::collections::BinaryHeap<TotalF64> =
                        std::collections::BinaryHeap::with_capacity(m + 1);
                    for w in space.enumerate_range(start, end)? {
                        let s = scorer.score(&w);
                        if heap.len() < m {
                            heap.push(TotalF64(s));
                        } else if s < heap.peek().expect("heap nonempty").0 {
                            heap.pop();
                            heap.push(TotalF64(s));
                        }
                    }
                    Ok(heap.into_sorted_vec().into_iter().map(|t| t.0).collect())
                })
                .collect();
            let mut best: Vec<f64> = Vec::new();
            for h in heaps {
                best.extend(h?);
            }
            best.sort_by(f64::total_cmp);
            best[m - 1]
        }
    };

    let ranges = split_ranges(total, rayon::current_num_threads() as u64 * 4);
    let parts: Vec<Result<Vec<ScoredCandidate>>> = ranges
        .into_par_iter()
        .map(|(start, end)| {
            let mut out = Vec::new();
            for (off, w) in space.enumerate_range(start, end)?.enumerate() {
                let s = scorer.score(&w);
                if s <= cutoff {
                    out.push(ScoredCandidate {
                        index: start + off as u64,
                        score: s,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut members = Vec::new();
    for p in parts {
        members.extend(p?);
    }
    if members.is_empty() {
        return Err(Error::EmptyAcceptanceSet {
            threshold: cutoff,
            min_score: f64::NAN,
        });
    }
    Ok(AcceptanceSet::from_members(
        space.clone(),
        metric,
        cutoff,
        members,
        n_candidates,
    ))
}

#[derive(PartialEq)]
struct TotalF64(f64);
impl Eq for TotalF64 {}
impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// p_a implied by threshold `a` when M is chi-squared with k dof.
pub fn analytic_p_a_from_threshold(a: f64, k: usize) -> Result<f64> {
    chi2_cdf(a, k)
}

/// Threshold a implied by acceptance probability `p_a` under the same law.
pub fn analytic_threshold_from_p_a(p_a: f64, k: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&p_a) {
        return Err(Error::Domain(format!("p_a must be in [0, 1) for inversion, got {p_a}")));
    }
    chi2_quantile(p_a, k)
}

/// How to evaluate the remaining covariate variance at a given p_a.
pub enum VarianceMode<'a> {
    /// Chi-squared identity: v = P(chi2_{k+2} <= a) / P(chi2_k <= a).
    Analytic,
    /// Ratio of mean score over the acceptance set to mean score overall.
    Empirical {
        space: &'a DesignSpace,
        x: &'a CovariateMatrix,
        metric: BalanceMetric,
    },
}

/// Fraction of between-group covariate variance remaining at `p_a`.
pub fn variance_remaining(p_a: f64, k: usize, mode: VarianceMode<'_>) -> Result<f64> {
    if !(p_a > 0.0 && p_a <= 1.0) {
        return Err(Error::Domain(format!("p_a must be in (0, 1], got {p_a}")));
    }
    match mode {
        VarianceMode::Analytic => {
            if p_a == 1.0 {
                return Ok(1.0);
            }
            let a = chi2_quantile(p_a, k)?;
            let denom = chi2_cdf(a, k)?;
            if denom == 0.0 {
                return Ok(0.0);
            }
            Ok(chi2_cdf(a, k + 2)? / denom)
        }
        VarianceMode::Empirical { space, x, metric } => {
            let summary = ScoreSummary::build(space, x, metric)?;
            Ok(summary.v_at(p_a))
        }
    }
}

/// Sorted scores with prefix sums; evaluates empirical remaining variance
/// for any p_a without re-scoring.
pub struct ScoreSummary {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    n_candidates: BigUint,
}

impl ScoreSummary {
    pub fn build(space: &DesignSpace, x: &CovariateMatrix, metric: BalanceMetric) -> Result<Self> {
        let scored = score_all(space, x, metric)?;
        let mut sorted: Vec<f64> = scored.into_iter().map(|s| s.score).collect();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &s in &sorted {
            acc += s;
            prefix.push(acc);
        }
        Ok(Self {
            sorted,
            prefix,
            n_candidates: space.count(),
        })
    }

    /// Mean accepted score over mean score, with boundary ties included.
    pub fn v_at(&self, p_a: f64) -> f64 {
        let n = self.sorted.len();
        let total = self.prefix[n];
        if total == 0.0 {
            return 1.0;
        }
        let m = ceil_fraction(&self.n_candidates, p_a)
            .to_u64()
            .expect("candidate count was enumerable") as usize;
        let cutoff = self.sorted[m - 1];
        let kept = self.sorted.partition_point(|&s| s <= cutoff);
        (self.prefix[kept] / kept as f64) / (total / n as f64)
    }
}
