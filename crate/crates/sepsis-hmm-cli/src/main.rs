//! Command-line pipeline for the sepsis progression HMM.
//!
//! Subcommands: `simulate`, `fit`, `map-estimate`, `decode`, `criteria`,
//! `analyze`. All randomness is governed by explicit `--seed` values;
//! repeated runs with the same inputs are byte-identical (pass
//! `--no-timestamp` to `fit` to suppress the one timestamped header line).
//! Exit codes: 0 success, 2 usage, 3 file I/O, 4 parse, 5 validation,
//! 6 infeasible parameters, 7 internal.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use commands::{analyze, criteria, decode, fit, map_estimate, simulate, CliError};

#[derive(Parser)]
#[command(
    name = "sepsis-hmm",
    version,
    about = "Five-state covariate-modulated HMM of sepsis progression"
)]
struct Cli {
    /// Structured config file; flags override its values. Falls back to the
    /// SEPSIS_HMM_CONFIG environment variable when not given.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    /// Rayon thread count (0 = library default). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic cohort from model parameters.
    Simulate(simulate::Args),
    /// Fit the model to an episode file by MCMC.
    Fit(fit::Args),
    /// Extract marginal MAP parameters from a posterior file.
    MapEstimate(map_estimate::Args),
    /// Decode latent trajectories for an episode file with fixed parameters.
    Decode(decode::Args),
    /// Evaluate sepsis-1 and qSOFA flags per interval.
    Criteria(criteria::Args),
    /// Fraction metrics, conditional histograms, divergence and overlap
    /// reports from a decoded trajectory file.
    Analyze(analyze::Args),
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore failures from double initialization (tests, reuse).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let config = match config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => exit_with(e),
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate::run(args, &config),
        Command::Fit(args) => fit::run(args, &config),
        Command::MapEstimate(args) => map_estimate::run(args),
        Command::Decode(args) => decode::run(args, &config),
        Command::Criteria(args) => criteria::run(args),
        Command::Analyze(args) => analyze::run(args, &config),
    };
    match result {
        Ok(()) => {}
        Err(e) => exit_with(e),
    }
}

fn exit_with(e: CliError) -> ! {
    eprintln!("error: category={} {}", e.category(), e);
    std::process::exit(e.exit_code());
}
