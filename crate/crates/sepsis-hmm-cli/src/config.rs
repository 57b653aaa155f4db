//! Optional structured config file with per-subcommand sections; command-line
//! flags override whatever the file sets. The file path comes from `--config`
//! or the `SEPSIS_HMM_CONFIG` environment variable.

use std::path::Path;

use serde::Deserialize;

use crate::commands::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n_patients: Option<usize>,
    pub max_intervals: Option<usize>,
    pub covariate_means: Option<[f64; 3]>,
    pub covariate_sds: Option<[f64; 3]>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub sweeps: Option<usize>,
    pub keep: Option<usize>,
    pub beta_log_step: Option<f64>,
    pub lambda_logit_step: Option<f64>,
    pub adapt_burnin: Option<usize>,
    pub seed: Option<u64>,
    pub use_outcomes: Option<bool>,
    pub mu_prior_mean: Option<[f64; 5]>,
    pub mu_prior_sd: Option<[f64; 5]>,
    pub sigma_prior_shape: Option<f64>,
    pub sigma_prior_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub sweeps: Option<usize>,
    pub keep: Option<usize>,
    pub seed: Option<u64>,
    pub use_outcome: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub bins: Option<usize>,
}

pub fn load(explicit: Option<&Path>) -> Result<FileConfig, CliError> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os("SEPSIS_HMM_CONFIG").map(Into::into),
    };
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}
