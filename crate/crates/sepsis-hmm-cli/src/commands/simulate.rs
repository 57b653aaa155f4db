use std::path::PathBuf;

use clap::Parser;

use sepsis_hmm::io::{read_params, write_episodes, write_params, write_true_states};
use sepsis_hmm::sim::{default_ground_truth, simulate_cohort, CohortSpec};

use crate::config::FileConfig;

use super::CliError;

#[derive(Parser, Debug)]
pub struct Args {
    /// Generating parameters file; omitted = built-in reference parameters.
    #[arg(long)]
    params: Option<PathBuf>,

    /// Output episode CSV.
    #[arg(long)]
    out: PathBuf,

    /// Optional output CSV of ground-truth latent states.
    #[arg(long)]
    truth_out: Option<PathBuf>,

    /// Optionally write the generating parameters alongside the cohort.
    #[arg(long)]
    params_out: Option<PathBuf>,

    #[arg(long)]
    n_patients: Option<usize>,

    #[arg(long)]
    max_intervals: Option<usize>,

    /// Covariate means, three comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    cov_mean: Option<Vec<f64>>,

    /// Covariate standard deviations, three comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    cov_sd: Option<Vec<f64>>,

    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(args: Args, file: &FileConfig) -> Result<(), CliError> {
    let params = match &args.params {
        Some(p) => read_params(p)?,
        None => default_ground_truth(),
    };
    let defaults = CohortSpec::default();
    let section = &file.simulate;
    let spec = CohortSpec {
        n_patients: args.n_patients.or(section.n_patients).unwrap_or(defaults.n_patients),
        max_intervals: args
            .max_intervals
            .or(section.max_intervals)
            .unwrap_or(defaults.max_intervals),
        covariate_means: args
            .cov_mean
            .as_deref()
            .map(|v| to_array3(v, "--cov-mean"))
            .transpose()?
            .or(section.covariate_means)
            .unwrap_or(defaults.covariate_means),
        covariate_sds: args
            .cov_sd
            .as_deref()
            .map(|v| to_array3(v, "--cov-sd"))
            .transpose()?
            .or(section.covariate_sds)
            .unwrap_or(defaults.covariate_sds),
        seed: args.seed.or(section.seed).unwrap_or(defaults.seed),
    };
    let sims = simulate_cohort(&params, &spec)?;
    let episodes: Vec<_> = sims.iter().map(|s| s.episode.clone()).collect();
    write_episodes(&args.out, &episodes)?;
    if let Some(path) = &args.truth_out {
        let ids: Vec<String> = sims.iter().map(|s| s.episode.episode_id.clone()).collect();
        let states: Vec<_> = sims.iter().map(|s| s.true_states.clone()).collect();
        write_true_states(path, &ids, &states)?;
    }
    if let Some(path) = &args.params_out {
        write_params(path, &params)?;
    }
    let died = episodes
        .iter()
        .filter(|e| e.outcome == sepsis_hmm::Outcome::Died)
        .count();
    let censored = episodes
        .iter()
        .filter(|e| e.outcome == sepsis_hmm::Outcome::Censored)
        .count();
    let mean_len =
        episodes.iter().map(|e| e.len()).sum::<usize>() as f64 / episodes.len() as f64;
    eprintln!(
        "simulated {} episodes (mean length {:.2} intervals, {} died, {} censored) -> {}",
        episodes.len(),
        mean_len,
        died,
        censored,
        args.out.display()
    );
    Ok(())
}

fn to_array3(v: &[f64], flag: &str) -> Result<[f64; 3], CliError> {
    if v.len() != 3 {
        return Err(CliError::Validation(format!(
            "{flag} needs exactly 3 comma-separated values, got {}",
            v.len()
        )));
    }
    Ok([v[0], v[1], v[2]])
}
