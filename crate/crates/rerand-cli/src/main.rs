//! `rerand`: rerandomization design analysis from the command line.
//!
//! Every run writes `manifest.json` (and `result.json`, plus curve CSVs
//! where applicable) into `--out-dir`, and prints the result JSON to
//! stdout. Outputs are byte-identical for a fixed seed regardless of
//! `--threads`; the manifest's wall-clock duration is the one exception.

mod commands;
mod config;
mod jsonout;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rerand_core::Error as CoreError;

#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let exit_code = match e {
            // Statistical-validity failures are distinct from bad input.
            CoreError::InadmissibleAssignment => 3,
            _ => 2,
        };
        Self {
            exit_code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "rerand", version, about = "Rerandomization-based experimental design: enumerate assignments, score balance, run exact tests, and choose acceptance thresholds")]
struct Cli {
    /// Root seed; falls back to the RERAND_SEED environment variable.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism). Affects wall time
    /// only, never output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for result.json, manifest.json and curve files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    /// Absolute mean difference of a single covariate.
    M,
    /// Mahalanobis distance between group covariate means.
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Grid expansion plus bisection.
    Grid,
    /// Robbins-Monro stochastic search.
    Rm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VModeArg {
    /// Chi-squared remaining-variance identity.
    Analytic,
    /// Ratio of mean scores, acceptance set vs all candidates.
    Empirical,
}

#[derive(Subcommand)]
enum Command {
    /// Count candidate treatment assignments.
    Count {
        /// Units in a completely randomized design.
        #[arg(long)]
        n: Option<usize>,
        /// Treated units (default n/2).
        #[arg(long)]
        treated: Option<usize>,
        /// Number of matched pairs (adjacent units pair up).
        #[arg(long, conflicts_with_all = ["n", "treated"])]
        pairs: Option<usize>,
    },
    /// Build an acceptance set from a covariate CSV and summarize it.
    Balance {
        /// CSV of covariates (header row; every column is a covariate).
        #[arg(long)]
        data: PathBuf,
        /// Treated units (default: half the rows).
        #[arg(long)]
        treated: Option<usize>,
        /// Number of matched pairs; rows pair up adjacently (1-2, 3-4, ...).
        #[arg(long, conflicts_with = "treated")]
        pairs: Option<usize>,
        #[arg(long, value_enum, default_value_t = MetricArg::Mahalanobis)]
        metric: MetricArg,
        /// Keep the best fraction p_a of candidates.
        #[arg(long)]
        pa: Option<f64>,
        /// Keep candidates with score <= threshold.
        #[arg(long, conflicts_with = "pa")]
        threshold: Option<f64>,
        /// Also write members.csv with (index, score) rows.
        #[arg(long)]
        write_members: bool,
    },
    /// Exact randomization test of a constant-effect null.
    Test {
        /// CSV with covariates, an outcome column, and an assignment column.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "y")]
        outcome_col: String,
        #[arg(long, default_value = "arm")]
        arm_col: String,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long, value_enum, default_value_t = MetricArg::Mahalanobis)]
        metric: MetricArg,
        #[arg(long)]
        pa: Option<f64>,
        #[arg(long, conflicts_with = "pa")]
        threshold: Option<f64>,
        /// Null hypothesis effect value.
        #[arg(long, default_value_t = 0.0)]
        tau0: f64,
        /// Include the reference estimate distribution in the output.
        #[arg(long)]
        keep_distribution: bool,
    },
    /// Fiducial interval for the constant effect, by test inversion.
    Interval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "y")]
        outcome_col: String,
        #[arg(long, default_value = "arm")]
        arm_col: String,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long, value_enum, default_value_t = MetricArg::Mahalanobis)]
        metric: MetricArg,
        #[arg(long)]
        pa: Option<f64>,
        #[arg(long, conflicts_with = "pa")]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Grid)]
        method: MethodArg,
        /// Endpoint tolerance in effect units.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Minimum p-value as a function of the acceptance probability.
    MinpCurve {
        /// Candidate count (alternative to --n/--treated/--pairs).
        #[arg(long)]
        n_cand: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        treated: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
        /// Explicit comma-separated p_a grid.
        #[arg(long)]
        pa_grid: Option<String>,
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
    },
    /// Choose the acceptance probability.
    Choose {
        #[command(subcommand)]
        procedure: ChooseCommand,
    },
    /// Selector evaluation study over (n, tau) cells from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Semi-synthetic design analysis: impute potential outcomes from an
    /// OLS fit on experimental data, then choose p_a on a subsample.
    Semisynthetic {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "y")]
        outcome_col: String,
        #[arg(long, default_value = "arm")]
        arm_col: String,
        /// Unit inclusion probability for the subsample.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long)]
        pa_grid: Option<String>,
        #[arg(long, default_value_t = 12)]
        grid_points: usize,
        #[arg(long, default_value_t = 100)]
        mc_iters: u64,
    },
}

#[derive(Subcommand)]
enum ChooseCommand {
    /// Invert the minimum-p-value formula for a target level.
    Apriori {
        #[arg(long)]
        beta_target: f64,
        #[arg(long)]
        n_cand: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        treated: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Minimize lambda * min_p + (1 - lambda) * remaining variance.
    Heuristic {
        #[arg(long)]
        lambda: f64,
        /// Covariate count (chi-squared dof) for the analytic mode.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n_cand: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        treated: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long, value_enum, default_value_t = VModeArg::Analytic)]
        v_mode: VModeArg,
        /// Covariate CSV (required for the empirical mode).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MetricArg::Mahalanobis)]
        metric: MetricArg,
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
    },
    /// Minimize the prior-expected p-value by simulation.
    Design {
        /// Covariate CSV; omit to draw covariates from a standard normal.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        treated: Option<usize>,
        /// Covariate count when --data is not given.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 10.0)]
        beta_sd: f64,
        #[arg(long, default_value_t = 0.0)]
        tau_mean: f64,
        #[arg(long, default_value_t = 10.0)]
        tau_sd: f64,
        /// Point-mass effect prior (overrides --tau-mean/--tau-sd).
        #[arg(long)]
        tau_point: Option<f64>,
        /// Outcome noise standard deviation (default sqrt(0.1)).
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        pa_grid: Option<String>,
        #[arg(long, default_value_t = 16)]
        grid_points: usize,
        #[arg(long, default_value_t = 200)]
        mc_iters: u64,
    },
}

/// Seed precedence: flag, then (for simulate) config, then RERAND_SEED, 0.
pub fn resolve_seed(flag: Option<u64>, config_seed: Option<u64>) -> u64 {
    flag.or(config_seed)
        .or_else(|| std::env::var("RERAND_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore the error if a pool was already installed (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        eprintln!("error: cannot create out-dir {}: {e}", cli.out_dir.display());
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Count { n, treated, pairs } => {
            commands::count(&cli, *n, *treated, *pairs)
        }
        Command::Balance {
            data,
            treated,
            pairs,
            metric,
            pa,
            threshold,
            write_members,
        } => commands::balance(
            &cli,
            data,
            *treated,
            *pairs,
            *metric,
            *pa,
            *threshold,
            *write_members,
        ),
        Command::Test {
            data,
            outcome_col,
            arm_col,
            pairs,
            metric,
            pa,
            threshold,
            tau0,
            keep_distribution,
        } => commands::test(
            &cli,
            data,
            outcome_col,
            arm_col,
            *pairs,
            *metric,
            *pa,
            *threshold,
            *tau0,
            *keep_distribution,
        ),
        Command::Interval {
            data,
            outcome_col,
            arm_col,
            pairs,
            metric,
            pa,
            threshold,
            alpha,
            method,
            tolerance,
        } => commands::interval(
            &cli,
            data,
            outcome_col,
            arm_col,
            *pairs,
            *metric,
            *pa,
            *threshold,
            *alpha,
            *method,
            *tolerance,
        ),
        Command::MinpCurve {
            n_cand,
            n,
            treated,
            pairs,
            pa_grid,
            grid_points,
        } => commands::minp_curve(&cli, *n_cand, *n, *treated, *pairs, pa_grid.as_deref(), *grid_points),
        Command::Choose { procedure } => match procedure {
            ChooseCommand::Apriori {
                beta_target,
                n_cand,
                n,
                treated,
                pairs,
            } => commands::choose_apriori(&cli, *beta_target, *n_cand, *n, *treated, *pairs),
            ChooseCommand::Heuristic {
                lambda,
                k,
                n_cand,
                n,
                treated,
                pairs,
                v_mode,
                data,
                metric,
                grid_points,
            } => commands::choose_heuristic(
                &cli,
                *lambda,
                *k,
                *n_cand,
                *n,
                *treated,
                *pairs,
                *v_mode,
                data.as_deref(),
                *metric,
                *grid_points,
            ),
            ChooseCommand::Design {
                data,
                n,
                treated,
                k,
                beta_sd,
                tau_mean,
                tau_sd,
                tau_point,
                noise_sd,
                pa_grid,
                grid_points,
                mc_iters,
            } => commands::choose_design(
                &cli,
                data.as_deref(),
                *n,
                *treated,
                *k,
                *beta_sd,
                *tau_mean,
                *tau_sd,
                *tau_point,
                *noise_sd,
                pa_grid.as_deref(),
                *grid_points,
                *mc_iters,
            ),
        },
        Command::Simulate { config } => commands::simulate(&cli, config),
        Command::Semisynthetic {
            data,
            outcome_col,
            arm_col,
            fraction,
            pa_grid,
            grid_points,
            mc_iters,
        } => commands::semisynthetic(
            &cli,
            data,
            outcome_col,
            arm_col,
            *fraction,
            pa_grid.as_deref(),
            *grid_points,
            *mc_iters,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code)
        }
    }
}
