use std::path::PathBuf;

use clap::Parser;

use sepsis_hmm::inference::{MuPrior, Sampler, SamplerConfig};
use sepsis_hmm::io::{
    read_checkpoint, read_episodes, write_checkpoint, write_posterior, PosteriorFileOptions,
};

use crate::config::FileConfig;

use super::CliError;

#[derive(Parser, Debug)]
pub struct Args {
    /// Input episode CSV.
    #[arg(long)]
    episodes: PathBuf,

    /// Output posterior file.
    #[arg(long)]
    out: PathBuf,

    #[arg(long)]
    sweeps: Option<usize>,

    /// Samples retained from the end of the run.
    #[arg(long)]
    keep: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    beta_log_step: Option<f64>,

    #[arg(long)]
    lambda_logit_step: Option<f64>,

    #[arg(long)]
    adapt_burnin: Option<usize>,

    /// Ignore episode outcomes during fitting.
    #[arg(long)]
    no_outcomes: bool,

    /// Normal prior means for the emission means (five values).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu_prior_mean: Option<Vec<f64>>,

    /// Normal prior sds for the emission means (five values).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu_prior_sd: Option<Vec<f64>>,

    /// Checkpoint file to write/resume.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Write the checkpoint every this many sweeps.
    #[arg(long)]
    checkpoint_every: Option<usize>,

    /// Resume from the checkpoint file instead of starting fresh.
    #[arg(long, requires = "checkpoint")]
    resume: bool,

    /// Stop (writing a checkpoint) after this many sweeps; used to exercise
    /// interrupted runs.
    #[arg(long, requires = "checkpoint")]
    stop_after: Option<usize>,

    /// Omit the timestamp header line for byte-reproducible output.
    #[arg(long)]
    no_timestamp: bool,
}

pub fn run(args: Args, file: &FileConfig) -> Result<(), CliError> {
    let cohort = read_episodes(&args.episodes)?;
    let section = &file.fit;
    let defaults = SamplerConfig::default();
    let mu_prior = match (
        args.mu_prior_mean
            .as_deref()
            .map(|v| to5(v, "--mu-prior-mean"))
            .transpose()?
            .or(section.mu_prior_mean),
        args.mu_prior_sd
            .as_deref()
            .map(|v| to5(v, "--mu-prior-sd"))
            .transpose()?
            .or(section.mu_prior_sd),
    ) {
        (Some(mean), Some(sd)) => Some(MuPrior { mean, sd }),
        (None, None) => None,
        _ => {
            return Err(CliError::Validation(
                "mu prior mean and sd must be given together".into(),
            ))
        }
    };
    let config = SamplerConfig {
        n_sweeps: args.sweeps.or(section.sweeps).unwrap_or(defaults.n_sweeps),
        n_keep: args.keep.or(section.keep).unwrap_or(defaults.n_keep),
        beta_log_step: args
            .beta_log_step
            .or(section.beta_log_step)
            .unwrap_or(defaults.beta_log_step),
        lambda_logit_step: args
            .lambda_logit_step
            .or(section.lambda_logit_step)
            .unwrap_or(defaults.lambda_logit_step),
        adapt_burnin: args
            .adapt_burnin
            .or(section.adapt_burnin)
            .unwrap_or(defaults.adapt_burnin),
        seed: args.seed.or(section.seed).unwrap_or(defaults.seed),
        mu_prior,
        sigma_prior_shape: section.sigma_prior_shape.unwrap_or(defaults.sigma_prior_shape),
        sigma_prior_scale: section.sigma_prior_scale.unwrap_or(defaults.sigma_prior_scale),
        use_outcomes: if args.no_outcomes {
            false
        } else {
            section.use_outcomes.unwrap_or(defaults.use_outcomes)
        },
        store_final_latents: false,
    };

    let mut sampler = if args.resume {
        let path = args.checkpoint.as_ref().unwrap();
        let ck = read_checkpoint(path)?;
        eprintln!(
            "resuming from {} at sweep {} of {}",
            path.display(),
            ck.sweep,
            ck.config.n_sweeps
        );
        Sampler::from_checkpoint(ck, &cohort)?
    } else {
        Sampler::new(&cohort, &config)?
    };

    let total = sampler.config().n_sweeps;
    let stop_at = args.stop_after.map(|s| s.min(total));
    loop {
        let done = sampler.completed_sweeps();
        if let Some(stop) = stop_at {
            if done >= stop {
                let path = args.checkpoint.as_ref().unwrap();
                write_checkpoint(path, &sampler.checkpoint())?;
                eprintln!(
                    "stopped after {done} of {total} sweeps; checkpoint at {} (resume with --resume)",
                    path.display()
                );
                return Ok(());
            }
        }
        if done >= total {
            break;
        }
        let next = match (args.checkpoint_every, stop_at) {
            (Some(every), _) if every > 0 => {
                let at_boundary = (done / every + 1) * every;
                at_boundary.min(stop_at.unwrap_or(total)).min(total)
            }
            (_, Some(stop)) => stop.min(total),
            _ => total,
        };
        sampler.run_to(next)?;
        if let (Some(every), Some(path)) = (args.checkpoint_every, args.checkpoint.as_ref()) {
            if every > 0 && sampler.completed_sweeps() % every == 0 {
                write_checkpoint(path, &sampler.checkpoint())?;
            }
        }
    }

    let chain = sampler.finish()?;
    for w in &chain.warnings {
        eprintln!("warning: {w}");
    }
    let opts = PosteriorFileOptions {
        timestamp: if args.no_timestamp {
            None
        } else {
            Some(now_iso8601())
        },
    };
    write_posterior(&args.out, &chain, &opts)?;
    eprintln!(
        "kept {} samples (beta acceptance {:.3}, lambda acceptance {:.3}) -> {}",
        chain.samples.len(),
        chain.acceptance.beta_rate(),
        chain.acceptance.lambda_rate(),
        args.out.display()
    );
    Ok(())
}

fn to5(v: &[f64], flag: &str) -> Result<[f64; 5], CliError> {
    if v.len() != 5 {
        return Err(CliError::Validation(format!(
            "{flag} needs exactly 5 comma-separated values, got {}",
            v.len()
        )));
    }
    Ok([v[0], v[1], v[2], v[3], v[4]])
}

fn now_iso8601() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".into())
}
