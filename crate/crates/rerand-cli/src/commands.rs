//! Subcommand implementations.

use std::path::Path;

use num_bigint::BigUint;

use rerand_core::balance::{
    build_acceptance_set, AcceptanceRule, AcceptanceSet, BalanceMetric, VarianceMode,
};
use rerand_core::inference::{
    fiducial_interval_with, min_p_value_curve, randomization_test_with, FiducialOptions,
    IntervalMethod, OutcomeVector, TestOptions,
};
use rerand_core::numerics::MvnSpec;
use rerand_core::randset::{derive_seed, AssignmentVector, DesignSpace};
use rerand_core::simharness::{
    run_selector_study, semisynthetic_build, semisynthetic_design_curve, tau_sampling_report,
    DataTable, OutcomeSource, SemiSyntheticData,
};
use rerand_core::threshold::{
    apriori_p_a, design_expected_pvalue, feasible_p_a_grid, heuristic_p_a, CovariateModel,
    DesignCurve, PriorSpec, TauPrior,
};

use crate::config::ConfigFile;
use crate::jsonout::{float_arr, Jv};
use crate::manifest::ManifestBuilder;
use crate::{Cli, CliError, MethodArg, MetricArg, VModeArg};

fn metric_of(arg: MetricArg) -> BalanceMetric {
    match arg {
        MetricArg::M => BalanceMetric::AbsMeanDiff,
        MetricArg::Mahalanobis => BalanceMetric::MahalanobisM,
    }
}

fn metric_name(arg: MetricArg) -> &'static str {
    match arg {
        MetricArg::M => "m",
        MetricArg::Mahalanobis => "mahalanobis",
    }
}

/// Resolve the design space from flags (and the row count when data is
/// present). Treated defaults to half the units.
fn resolve_space(
    n: Option<usize>,
    treated: Option<usize>,
    pairs: Option<usize>,
    n_rows: Option<usize>,
) -> Result<DesignSpace, CliError> {
    if let Some(m) = pairs {
        if let Some(rows) = n_rows {
            if rows != 2 * m {
                return Err(CliError::input(format!(
                    "--pairs {m} needs {} rows, data has {rows}",
                    2 * m
                )));
            }
        }
        return Ok(DesignSpace::paired_adjacent(m)?);
    }
    let n = n
        .or(n_rows)
        .ok_or_else(|| CliError::input("specify --n/--treated or --pairs"))?;
    if let Some(rows) = n_rows {
        if rows != n {
            return Err(CliError::input(format!("--n {n} does not match {rows} data rows")));
        }
    }
    let treated = treated.unwrap_or(n / 2);
    Ok(DesignSpace::complete(n, treated)?)
}

fn resolve_candidates(
    n_cand: Option<u64>,
    n: Option<usize>,
    treated: Option<usize>,
    pairs: Option<usize>,
) -> Result<BigUint, CliError> {
    if let Some(c) = n_cand {
        if c == 0 {
            return Err(CliError::input("--n-cand must be positive"));
        }
        return Ok(BigUint::from(c));
    }
    Ok(resolve_space(n, treated, pairs, None)?.count())
}

fn rule_from(pa: Option<f64>, threshold: Option<f64>) -> Result<AcceptanceRule, CliError> {
    match (pa, threshold) {
        (Some(p), None) => Ok(AcceptanceRule::TopFraction(p)),
        (None, Some(a)) => Ok(AcceptanceRule::Threshold(a)),
        _ => Err(CliError::input("specify exactly one of --pa or --threshold")),
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("cannot parse grid value '{tok}'")))
        })
        .collect()
}

fn load_table(path: &Path) -> Result<DataTable, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    Ok(DataTable::read(file)?)
}

/// Assignment vector from a two-label column: the lexicographically larger
/// label is treated.
fn assignment_from_labels(labels: &[String]) -> Result<AssignmentVector, CliError> {
    let mut distinct = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(CliError::input(format!(
            "assignment column must have exactly 2 distinct labels, got {}",
            distinct.len()
        )));
    }
    let bits: Vec<bool> = labels.iter().map(|l| *l == distinct[1]).collect();
    Ok(AssignmentVector::from_bits(&bits)?)
}

struct RunWriter {
    out_dir: std::path::PathBuf,
    manifest: ManifestBuilder,
}

impl RunWriter {
    fn new(cli: &Cli, subcommand: &str, parameters: Jv, seed: u64) -> Self {
        Self {
            out_dir: cli.out_dir.clone(),
            manifest: ManifestBuilder::new(subcommand, parameters, seed),
        }
    }

    fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.record_input(path)?;
        Ok(())
    }

    fn write_curve(&mut self, name: &str, rows: &[(f64, f64, f64)]) -> Result<(), CliError> {
        let mut text = String::from("p_a,value,stderr\n");
        for &(p_a, value, stderr) in rows {
            text.push_str(&format!(
                "{},{},{}\n",
                csv_float(p_a),
                csv_float(value),
                csv_float(stderr)
            ));
        }
        let path = self.out_dir.join(name);
        std::fs::write(&path, text)?;
        self.manifest.record_output(&path);
        Ok(())
    }

    fn write_named(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)?;
        self.manifest.record_output(&path);
        Ok(())
    }

    /// Write result.json and manifest.json; print `stdout_line` when given,
    /// otherwise the result JSON itself.
    fn finish(mut self, result: Jv, stdout_line: Option<String>) -> Result<(), CliError> {
        let rendered = result.render();
        let path = self.out_dir.join("result.json");
        std::fs::write(&path, &rendered)?;
        self.manifest.record_output(&path);
        self.manifest.write(&self.out_dir)?;
        match stdout_line {
            Some(line) => println!("{line}"),
            None => print!("{rendered}"),
        }
        Ok(())
    }
}

/// Full precision without JSON-specific string quoting (CSV cells).
fn csv_float(f: f64) -> String {
    if f.is_finite() {
        format!("{f:.16e}")
    } else if f > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn design_json(space: &DesignSpace) -> Jv {
    let kind = match space.structure() {
        rerand_core::DesignStructure::Complete => "complete",
        rerand_core::DesignStructure::Paired(_) => "paired",
    };
    Jv::obj()
        .with("kind", Jv::Str(kind.into()))
        .with("n", Jv::UInt(space.n() as u64))
        .with("n_treated", Jv::UInt(space.n_treated() as u64))
}

fn curve_points_json(curve: &DesignCurve) -> Jv {
    Jv::Arr(
        curve
            .points
            .iter()
            .map(|p| {
                Jv::obj()
                    .with("p_a", Jv::Float(p.p_a))
                    .with("expected_p_value", Jv::Float(p.expected_p_value))
                    .with("mc_std_error", Jv::Float(p.mc_std_error))
            })
            .collect(),
    )
}

pub fn count(
    cli: &Cli,
    n: Option<usize>,
    treated: Option<usize>,
    pairs: Option<usize>,
) -> Result<(), CliError> {
    let space = resolve_space(n, treated, pairs, None)?;
    let count = space.count();
    let params = design_json(&space);
    let writer = RunWriter::new(cli, "count", params, resolve_seed_plain(cli));
    let result = Jv::obj()
        .with("n_candidates", Jv::BigInt(count.to_string()))
        .with("design", design_json(&space));
    writer.finish(result, Some(count.to_string()))
}

fn resolve_seed_plain(cli: &Cli) -> u64 {
    crate::resolve_seed(cli.seed, None)
}

#[allow(clippy::too_many_arguments)]
pub fn balance(
    cli: &Cli,
    data: &Path,
    treated: Option<usize>,
    pairs: Option<usize>,
    metric: MetricArg,
    pa: Option<f64>,
    threshold: Option<f64>,
    write_members: bool,
) -> Result<(), CliError> {
    let table = load_table(data)?;
    let (x, names) = table.covariates()?;
    let space = resolve_space(None, treated, pairs, Some(x.n_units()))?;
    let rule = rule_from(pa, threshold)?;
    let set = build_acceptance_set(&space, &x, metric_of(metric), rule)?;

    let params = Jv::obj()
        .with("data", Jv::Str(data.display().to_string()))
        .with("metric", Jv::Str(metric_name(metric).into()))
        .with("rule", rule_json(rule))
        .with("design", design_json(&space));
    let mut writer = RunWriter::new(cli, "balance", params, resolve_seed_plain(cli));
    writer.record_input(data)?;

    if write_members {
        let mut text = String::from("index,score\n");
        for m in set.members() {
            text.push_str(&format!("{},{}\n", m.index, csv_float(m.score)));
        }
        writer.write_named("members.csv", &text)?;
    }

    let result = Jv::obj()
        .with("n_candidates", Jv::BigInt(set.n_candidates().to_string()))
        .with("threshold_a", Jv::Float(set.threshold_a()))
        .with("realized_p_a", Jv::Float(set.realized_p_a()))
        .with("members", Jv::UInt(set.len() as u64))
        .with("min_p_value", Jv::Float(set.min_p_value()))
        .with(
            "covariates",
            Jv::Arr(names.into_iter().map(Jv::Str).collect()),
        );
    writer.finish(result, None)
}

fn rule_json(rule: AcceptanceRule) -> Jv {
    match rule {
        AcceptanceRule::TopFraction(p) => Jv::obj().with("top_fraction", Jv::Float(p)),
        AcceptanceRule::Threshold(a) => Jv::obj().with("threshold", Jv::Float(a)),
    }
}

struct TestSetup {
    outcome: OutcomeVector,
    set: AcceptanceSet,
}

#[allow(clippy::too_many_arguments)]
fn test_setup(
    data: &Path,
    outcome_col: &str,
    arm_col: &str,
    pairs: Option<usize>,
    metric: MetricArg,
    pa: Option<f64>,
    threshold: Option<f64>,
) -> Result<TestSetup, CliError> {
    let table = load_table(data)?;
    let y = table.numeric_column(outcome_col)?;
    let labels = table.string_column(arm_col)?;
    let w_obs = assignment_from_labels(&labels)?;
    let (x, _) = table.covariates_excluding(&[outcome_col, arm_col])?;
    let space = resolve_space(None, Some(w_obs.n_treated()), pairs, Some(x.n_units()))?;
    let rule = rule_from(pa, threshold)?;
    let set = build_acceptance_set(&space, &x, metric_of(metric), rule)?;
    Ok(TestSetup {
        outcome: OutcomeVector::new(y, w_obs)?,
        set,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn test(
    cli: &Cli,
    data: &Path,
    outcome_col: &str,
    arm_col: &str,
    pairs: Option<usize>,
    metric: MetricArg,
    pa: Option<f64>,
    threshold: Option<f64>,
    tau0: f64,
    keep_distribution: bool,
) -> Result<(), CliError> {
    let setup = test_setup(data, outcome_col, arm_col, pairs, metric, pa, threshold)?;
    let opts = TestOptions {
        keep_distribution,
        ..TestOptions::default()
    };
    let r = randomization_test_with(&setup.outcome, &setup.set, tau0, &opts)?;

    let params = Jv::obj()
        .with("data", Jv::Str(data.display().to_string()))
        .with("outcome_col", Jv::Str(outcome_col.into()))
        .with("arm_col", Jv::Str(arm_col.into()))
        .with("metric", Jv::Str(metric_name(metric).into()))
        .with("rule", rule_json(rule_from(pa, threshold)?))
        .with("tau0", Jv::Float(tau0));
    let mut writer = RunWriter::new(cli, "test", params, resolve_seed_plain(cli));
    writer.record_input(data)?;

    let mut result = Jv::obj()
        .with("p_value", Jv::Float(r.p_value))
        .with("tau_hat", Jv::Float(r.tau_hat))
        .with("reference_size", Jv::UInt(r.reference_size))
        .with("min_p_value", Jv::Float(r.min_p_value))
        .with("tau0", Jv::Float(tau0))
        .with("subsampled", Jv::Bool(r.subsampled));
    if let Some(dist) = r.statistic_distribution {
        result.push("statistic_distribution", float_arr(&dist));
    }
    writer.finish(result, None)
}

#[allow(clippy::too_many_arguments)]
pub fn interval(
    cli: &Cli,
    data: &Path,
    outcome_col: &str,
    arm_col: &str,
    pairs: Option<usize>,
    metric: MetricArg,
    pa: Option<f64>,
    threshold: Option<f64>,
    alpha: f64,
    method: MethodArg,
    tolerance: f64,
) -> Result<(), CliError> {
    let setup = test_setup(data, outcome_col, arm_col, pairs, metric, pa, threshold)?;
    let method_core = match method {
        MethodArg::Grid => IntervalMethod::GridBisection,
        MethodArg::Rm => IntervalMethod::RobbinsMonro,
    };
    let seed = resolve_seed_plain(cli);
    let opts = FiducialOptions {
        tolerance,
        seed,
        ..FiducialOptions::default()
    };
    let interval = fiducial_interval_with(&setup.outcome, &setup.set, alpha, method_core, &opts)?;

    let params = Jv::obj()
        .with("data", Jv::Str(data.display().to_string()))
        .with("alpha", Jv::Float(alpha))
        .with(
            "method",
            Jv::Str(match method {
                MethodArg::Grid => "grid_bisection".into(),
                MethodArg::Rm => "robbins_monro".into(),
            }),
        )
        .with("tolerance", Jv::Float(tolerance))
        .with("rule", rule_json(rule_from(pa, threshold)?));
    let mut writer = RunWriter::new(cli, "interval", params, seed);
    writer.record_input(data)?;

    let display = format!(
        "{}..{}",
        plain_endpoint(interval.lower),
        plain_endpoint(interval.upper)
    );
    let result = Jv::obj()
        .with("lower", Jv::Float(interval.lower))
        .with("upper", Jv::Float(interval.upper))
        .with("alpha", Jv::Float(alpha))
        .with(
            "method",
            Jv::Str(match method {
                MethodArg::Grid => "grid_bisection".into(),
                MethodArg::Rm => "robbins_monro".into(),
            }),
        )
        .with("display", Jv::Str(display))
        .with("min_p_value", Jv::Float(setup.set.min_p_value()));
    writer.finish(result, None)
}

fn plain_endpoint(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn minp_curve(
    cli: &Cli,
    n_cand: Option<u64>,
    n: Option<usize>,
    treated: Option<usize>,
    pairs: Option<usize>,
    pa_grid: Option<&str>,
    grid_points: usize,
) -> Result<(), CliError> {
    let candidates = resolve_candidates(n_cand, n, treated, pairs)?;
    let grid = match pa_grid {
        Some(text) => parse_grid(text)?,
        None => feasible_p_a_grid(&candidates, grid_points),
    };
    let curve = min_p_value_curve(&candidates, &grid)?;

    let params = Jv::obj()
        .with("n_candidates", Jv::BigInt(candidates.to_string()))
        .with("grid_points", Jv::UInt(curve.len() as u64));
    let mut writer = RunWriter::new(cli, "minp-curve", params, resolve_seed_plain(cli));
    let rows: Vec<(f64, f64, f64)> = curve.iter().map(|&(p, v)| (p, v, 0.0)).collect();
    writer.write_curve("curve.csv", &rows)?;

    let result = Jv::obj()
        .with("n_candidates", Jv::BigInt(candidates.to_string()))
        .with(
            "points",
            Jv::Arr(
                curve
                    .iter()
                    .map(|&(p, v)| {
                        Jv::obj()
                            .with("p_a", Jv::Float(p))
                            .with("min_p_value", Jv::Float(v))
                    })
                    .collect(),
            ),
        );
    writer.finish(result, None)
}

pub fn choose_apriori(
    cli: &Cli,
    beta_target: f64,
    n_cand: Option<u64>,
    n: Option<usize>,
    treated: Option<usize>,
    pairs: Option<usize>,
) -> Result<(), CliError> {
    let candidates = resolve_candidates(n_cand, n, treated, pairs)?;
    let choice = apriori_p_a(beta_target, &candidates)?;
    let params = Jv::obj()
        .with("beta_target", Jv::Float(beta_target))
        .with("n_candidates", Jv::BigInt(candidates.to_string()));
    let writer = RunWriter::new(cli, "choose apriori", params, resolve_seed_plain(cli));
    let result = Jv::obj()
        .with("p_a", Jv::Float(choice.p_a))
        .with("reference_size", Jv::UInt(choice.reference_size))
        .with("min_p_value", Jv::Float(choice.min_p_value))
        .with("n_candidates", Jv::BigInt(candidates.to_string()));
    writer.finish(result, None)
}

#[allow(clippy::too_many_arguments)]
pub fn choose_heuristic(
    cli: &Cli,
    lambda: f64,
    k: Option<usize>,
    n_cand: Option<u64>,
    n: Option<usize>,
    treated: Option<usize>,
    pairs: Option<usize>,
    v_mode: VModeArg,
    data: Option<&Path>,
    metric: MetricArg,
    grid_points: usize,
) -> Result<(), CliError> {
    let (choice, candidates, k_used) = match v_mode {
        VModeArg::Analytic => {
            let k = k.ok_or_else(|| CliError::input("--k is required in analytic mode"))?;
            let candidates = resolve_candidates(n_cand, n, treated, pairs)?;
            (
                heuristic_p_a(lambda, k, &candidates, VarianceMode::Analytic, grid_points)?,
                candidates,
                k,
            )
        }
        VModeArg::Empirical => {
            let path =
                data.ok_or_else(|| CliError::input("--data is required in empirical mode"))?;
            let table = load_table(path)?;
            let (x, _) = table.covariates()?;
            let space = resolve_space(n, treated, pairs, Some(x.n_units()))?;
            let candidates = space.count();
            let k = x.n_covariates();
            let mode = VarianceMode::Empirical {
                space: &space,
                x: &x,
                metric: metric_of(metric),
            };
            (
                heuristic_p_a(lambda, k, &candidates, mode, grid_points)?,
                candidates,
                k,
            )
        }
    };

    let params = Jv::obj()
        .with("lambda", Jv::Float(lambda))
        .with("k", Jv::UInt(k_used as u64))
        .with("n_candidates", Jv::BigInt(candidates.to_string()))
        .with(
            "v_mode",
            Jv::Str(match v_mode {
                VModeArg::Analytic => "analytic".into(),
                VModeArg::Empirical => "empirical".into(),
            }),
        )
        .with("grid_points", Jv::UInt(grid_points as u64));
    let mut writer = RunWriter::new(cli, "choose heuristic", params, resolve_seed_plain(cli));
    if let Some(path) = data {
        writer.record_input(path)?;
    }
    let rows: Vec<(f64, f64, f64)> = choice
        .curve
        .iter()
        .map(|pt| (pt.p_a, pt.objective, 0.0))
        .collect();
    writer.write_curve("curve.csv", &rows)?;

    let result = Jv::obj()
        .with("p_a_star", Jv::Float(choice.p_a_star))
        .with("objective", Jv::Float(choice.objective_star))
        .with("lambda", Jv::Float(lambda))
        .with(
            "points",
            Jv::Arr(
                choice
                    .curve
                    .iter()
                    .map(|pt| {
                        Jv::obj()
                            .with("p_a", Jv::Float(pt.p_a))
                            .with("min_p", Jv::Float(pt.min_p))
                            .with("variance_remaining", Jv::Float(pt.variance_remaining))
                            .with("objective", Jv::Float(pt.objective))
                    })
                    .collect(),
            ),
        );
    writer.finish(result, None)
}

#[allow(clippy::too_many_arguments)]
pub fn choose_design(
    cli: &Cli,
    data: Option<&Path>,
    n: Option<usize>,
    treated: Option<usize>,
    k: Option<usize>,
    beta_sd: f64,
    tau_mean: f64,
    tau_sd: f64,
    tau_point: Option<f64>,
    noise_sd: Option<f64>,
    pa_grid: Option<&str>,
    grid_points: usize,
    mc_iters: u64,
) -> Result<(), CliError> {
    let noise_sd = noise_sd.unwrap_or_else(|| 0.1f64.sqrt());
    let (covariate_model, space, k_used) = match data {
        Some(path) => {
            let table = load_table(path)?;
            let (x, _) = table.covariates()?;
            let space = resolve_space(n, treated, None, Some(x.n_units()))?;
            let k = x.n_covariates();
            (CovariateModel::Fixed(x), space, k)
        }
        None => {
            let n = n.ok_or_else(|| CliError::input("--n is required without --data"))?;
            let k = k.ok_or_else(|| CliError::input("--k is required without --data"))?;
            let space = resolve_space(Some(n), treated, None, None)?;
            (
                CovariateModel::Mvn(MvnSpec::diagonal(&vec![1.0; k])?),
                space,
                k,
            )
        }
    };
    let tau_prior = match tau_point {
        Some(v) => TauPrior::PointMass(v),
        None => TauPrior::Gaussian {
            mean: tau_mean,
            sd: tau_sd,
        },
    };
    let prior = PriorSpec::new(
        MvnSpec::diagonal(&vec![beta_sd * beta_sd; k_used])?,
        tau_prior,
        noise_sd,
        covariate_model,
    )?;
    let grid = match pa_grid {
        Some(text) => parse_grid(text)?,
        None => feasible_p_a_grid(&space.count(), grid_points),
    };
    let seed = resolve_seed_plain(cli);
    let curve = design_expected_pvalue(&prior, &space, &grid, mc_iters, seed)?;

    let params = Jv::obj()
        .with("design", design_json(&space))
        .with("k", Jv::UInt(k_used as u64))
        .with("beta_sd", Jv::Float(beta_sd))
        .with("noise_sd", Jv::Float(noise_sd))
        .with("mc_iters", Jv::UInt(mc_iters))
        .with("grid_points", Jv::UInt(grid.len() as u64));
    let mut writer = RunWriter::new(cli, "choose design", params, seed);
    if let Some(path) = data {
        writer.record_input(path)?;
    }
    let rows: Vec<(f64, f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.p_a, p.expected_p_value, p.mc_std_error))
        .collect();
    writer.write_curve("curve.csv", &rows)?;

    let result = Jv::obj()
        .with("p_a_star", Jv::Float(curve.argmin_p_a))
        .with(
            "expected_p_value_at_star",
            Jv::Float(curve.argmin_point().expected_p_value),
        )
        .with("mc_iters", Jv::UInt(curve.mc_iters))
        .with("points", curve_points_json(&curve))
        .with(
            "warnings",
            Jv::Arr(curve.warnings.iter().cloned().map(Jv::Str).collect()),
        );
    writer.finish(result, None)
}

pub fn simulate(cli: &Cli, config_path: &Path) -> Result<(), CliError> {
    let config = ConfigFile::load(config_path)?;
    let mut study = config.study_config();
    study.seed = crate::resolve_seed(cli.seed, config.study.seed);
    study.validate()?;

    let beta_sd = config.beta_sd();
    let prior = PriorSpec::new(
        MvnSpec::diagonal(&vec![beta_sd * beta_sd; study.k])?,
        config.tau_prior(),
        study.noise_sd(),
        CovariateModel::Mvn(MvnSpec::diagonal(&vec![1.0; study.k])?),
    )?;
    let report = run_selector_study(&study, &prior)?;

    let params = Jv::obj()
        .with("config", Jv::Str(config_path.display().to_string()))
        .with(
            "n_grid",
            Jv::Arr(study.n_grid.iter().map(|&n| Jv::UInt(n as u64)).collect()),
        )
        .with("tau_grid", float_arr(&study.tau_grid))
        .with("replications", Jv::UInt(study.replications))
        .with("selector_mc_iters", Jv::UInt(study.selector_mc_iters))
        .with("truth_mc_iters", Jv::UInt(study.truth_mc_iters));
    let mut writer = RunWriter::new(cli, "simulate", params, study.seed);
    writer.record_input(config_path)?;

    let mut cells_json = Vec::new();
    for cell in &report.cells {
        let curve_name = format!("curve_n{}_tau{}.csv", cell.n, cell.tau);
        let rows: Vec<(f64, f64, f64)> = cell
            .truth_curve
            .iter()
            .map(|p| (p.p_a, p.expected_p_value, p.mc_std_error))
            .collect();
        writer.write_curve(&curve_name, &rows)?;
        cells_json.push(
            Jv::obj()
                .with("n", Jv::UInt(cell.n as u64))
                .with("tau", Jv::Float(cell.tau))
                .with("true_optimal_p_a", Jv::Float(cell.true_optimal_p_a))
                .with("mean_selected_p_a", Jv::Float(cell.mean_selected_p_a))
                .with("bias", Jv::Float(cell.bias))
                .with("rmse", Jv::Float(cell.rmse))
                .with("uniform_rmse", Jv::Float(cell.uniform_rmse))
                .with("relative_rmse", Jv::Float(cell.relative_rmse))
                .with("tau_dev_at_selected", Jv::Float(cell.tau_dev_at_selected))
                .with("tau_dev_at_full", Jv::Float(cell.tau_dev_at_full))
                .with("selected_p_a", float_arr(&cell.selected_p_a))
                .with("truth_curve", Jv::Str(curve_name.clone())),
        );
    }
    let result = Jv::obj()
        .with("replications", Jv::UInt(report.replications))
        .with("seed", Jv::UInt(report.seed))
        .with("cells", Jv::Arr(cells_json));
    writer.finish(result, None)
}

#[allow(clippy::too_many_arguments)]
pub fn semisynthetic(
    cli: &Cli,
    data: &Path,
    outcome_col: &str,
    arm_col: &str,
    fraction: f64,
    pa_grid: Option<&str>,
    grid_points: usize,
    mc_iters: u64,
) -> Result<(), CliError> {
    let table = load_table(data)?;
    let semi_data = SemiSyntheticData::from_table(&table, outcome_col, arm_col)?;
    let seed = resolve_seed_plain(cli);
    let built = semisynthetic_build(&semi_data, fraction, seed)?;
    let n_sub = built.subsample.len();
    let space = DesignSpace::complete(n_sub, n_sub / 2)?;
    let total = space.count();
    if total > BigUint::from(5_000_000u64) {
        return Err(CliError::input(format!(
            "subsample of {n_sub} units gives {total} candidate assignments; \
             reduce --fraction so the candidate space stays enumerable"
        )));
    }
    let grid = match pa_grid {
        Some(text) => parse_grid(text)?,
        None => feasible_p_a_grid(&total, grid_points),
    };
    let design_curve = semisynthetic_design_curve(
        &built.model,
        &built.subsample,
        &space,
        &grid,
        mc_iters,
        derive_seed(seed, &[1]),
    )?;
    let tau_report = tau_sampling_report(
        &OutcomeSource::Imputation {
            model: &built.model,
            subsample: &built.subsample,
        },
        &space,
        &grid,
        mc_iters,
        derive_seed(seed, &[2]),
    )?;

    let params = Jv::obj()
        .with("data", Jv::Str(data.display().to_string()))
        .with("outcome_col", Jv::Str(outcome_col.into()))
        .with("arm_col", Jv::Str(arm_col.into()))
        .with("fraction", Jv::Float(fraction))
        .with("mc_iters", Jv::UInt(mc_iters))
        .with("grid_points", Jv::UInt(grid.len() as u64));
    let mut writer = RunWriter::new(cli, "semisynthetic", params, seed);
    writer.record_input(data)?;

    let rows: Vec<(f64, f64, f64)> = design_curve
        .points
        .iter()
        .map(|p| (p.p_a, p.expected_p_value, p.mc_std_error))
        .collect();
    writer.write_curve("design_curve.csv", &rows)?;
    let tau_rows: Vec<(f64, f64, f64)> = tau_report
        .iter()
        .map(|p| (p.p_a, p.mean_tau_hat, p.sd_tau_hat))
        .collect();
    writer.write_curve("tau_curve.csv", &tau_rows)?;

    let result = Jv::obj()
        .with(
            "model",
            Jv::obj()
                .with("coefficients", float_arr(built.model.coefficients()))
                .with("sigma2", Jv::Float(built.model.sigma2()))
                .with("tau_hat", Jv::Float(built.model.tau_hat()))
                .with(
                    "covariates",
                    Jv::Arr(
                        semi_data
                            .covariate_names
                            .iter()
                            .cloned()
                            .map(Jv::Str)
                            .collect(),
                    ),
                )
                .with("control_label", Jv::Str(semi_data.control_label.clone()))
                .with("treated_label", Jv::Str(semi_data.treated_label.clone())),
        )
        .with(
            "subsample",
            Jv::Arr(
                built
                    .subsample
                    .iter()
                    .map(|&i| Jv::UInt(i as u64))
                    .collect(),
            ),
        )
        .with("n_candidates", Jv::BigInt(total.to_string()))
        .with("p_a_star", Jv::Float(design_curve.argmin_p_a))
        .with(
            "expected_p_value_at_star",
            Jv::Float(design_curve.argmin_point().expected_p_value),
        )
        .with("design_points", curve_points_json(&design_curve))
        .with(
            "tau_report",
            Jv::Arr(
                tau_report
                    .iter()
                    .map(|p| {
                        Jv::obj()
                            .with("p_a", Jv::Float(p.p_a))
                            .with("mean_tau_hat", Jv::Float(p.mean_tau_hat))
                            .with("sd_tau_hat", Jv::Float(p.sd_tau_hat))
                            .with("mean_abs_rel_dev", Jv::Float(p.mean_abs_rel_dev))
                    })
                    .collect(),
            ),
        );
    writer.finish(result, None)
}
