//! Versioned TOML configuration for the study commands. CLI flags override
//! config keys.

use serde::Deserialize;

use rerand_core::simharness::StudyConfig;
use rerand_core::threshold::TauPrior;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub prior: PriorSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub n_grid: Option<Vec<usize>>,
    pub tau_grid: Option<Vec<f64>>,
    pub replications: Option<u64>,
    pub p_a_grid: Option<Vec<f64>>,
    pub count_grid_from: Option<u64>,
    pub count_grid_points: Option<usize>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub beta: Option<Vec<f64>>,
    pub noise: Option<f64>,
    pub noise_is_variance: Option<bool>,
    pub selector_mc_iters: Option<u64>,
    pub truth_mc_iters: Option<u64>,
    pub uniform_baseline_draws: Option<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub beta_sd: Option<f64>,
    pub tau_mean: Option<f64>,
    pub tau_sd: Option<f64>,
    pub tau_point: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::input(format!("config error in {}: {e}", path.display())))?;
        if parsed.schema_version != 1 {
            return Err(CliError::input(format!(
                "config error: unsupported schema_version {} (expected 1)",
                parsed.schema_version
            )));
        }
        Ok(parsed)
    }

    /// Merge the study section over defaults.
    pub fn study_config(&self) -> StudyConfig {
        let d = StudyConfig::default();
        let s = &self.study;
        StudyConfig {
            n_grid: s.n_grid.clone().unwrap_or(d.n_grid),
            tau_grid: s.tau_grid.clone().unwrap_or(d.tau_grid),
            replications: s.replications.unwrap_or(d.replications),
            p_a_grid: s.p_a_grid.clone().or(d.p_a_grid),
            count_grid_from: s.count_grid_from.unwrap_or(d.count_grid_from),
            count_grid_points: s.count_grid_points.unwrap_or(d.count_grid_points),
            seed: s.seed.unwrap_or(d.seed),
            k: s.k.unwrap_or(d.k),
            beta: s.beta.clone().unwrap_or(d.beta),
            noise: s.noise.unwrap_or(d.noise),
            noise_is_variance: s.noise_is_variance.unwrap_or(d.noise_is_variance),
            selector_mc_iters: s.selector_mc_iters.unwrap_or(d.selector_mc_iters),
            truth_mc_iters: s.truth_mc_iters.unwrap_or(d.truth_mc_iters),
            uniform_baseline_draws: s.uniform_baseline_draws.unwrap_or(d.uniform_baseline_draws),
        }
    }

    pub fn beta_sd(&self) -> f64 {
        self.prior.beta_sd.unwrap_or(10.0)
    }

    pub fn tau_prior(&self) -> TauPrior {
        if let Some(point) = self.prior.tau_point {
            TauPrior::PointMass(point)
        } else {
            TauPrior::Gaussian {
                mean: self.prior.tau_mean.unwrap_or(0.0),
                sd: self.prior.tau_sd.unwrap_or(10.0),
            }
        }
    }
}
