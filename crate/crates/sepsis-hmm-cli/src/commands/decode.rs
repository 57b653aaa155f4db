use std::path::PathBuf;

use clap::Parser;

use sepsis_hmm::analysis::trajectory_records;
use sepsis_hmm::criteria::{qsofa_met, sepsis1_met};
use sepsis_hmm::inference::{decode_cohort, DecodeConfig};
use sepsis_hmm::io::{read_episodes, read_params, write_trajectories};

use crate::config::FileConfig;

use super::CliError;

#[derive(Parser, Debug)]
pub struct Args {
    /// Input episode CSV.
    #[arg(long)]
    episodes: PathBuf,

    /// Fixed model parameters file.
    #[arg(long)]
    params: PathBuf,

    /// Output trajectory CSV.
    #[arg(long)]
    out: PathBuf,

    #[arg(long)]
    sweeps: Option<usize>,

    #[arg(long)]
    keep: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Let the decoder see episode outcomes (off by default).
    #[arg(long)]
    use_outcome: bool,
}

pub fn run(args: Args, file: &FileConfig) -> Result<(), CliError> {
    let cohort = read_episodes(&args.episodes)?;
    let params = read_params(&args.params)?;
    let section = &file.decode;
    let defaults = DecodeConfig::default();
    let cfg = DecodeConfig {
        n_sweeps: args.sweeps.or(section.sweeps).unwrap_or(defaults.n_sweeps),
        n_keep: args.keep.or(section.keep).unwrap_or(defaults.n_keep),
        seed: args.seed.or(section.seed).unwrap_or(defaults.seed),
        use_outcome: args.use_outcome || section.use_outcome.unwrap_or(false),
    };
    let decoded = decode_cohort(&cohort, &params, &cfg)?;
    let mut records = Vec::new();
    for (ep, dec) in cohort.iter().zip(&decoded) {
        let sepsis1: Vec<bool> = ep.intervals.iter().map(sepsis1_met).collect();
        let qsofa: Vec<bool> = ep.intervals.iter().map(qsofa_met).collect();
        records.extend(trajectory_records(ep, dec, &sepsis1, &qsofa)?);
    }
    write_trajectories(&args.out, &records)?;
    eprintln!(
        "decoded {} episodes ({} intervals) -> {}",
        cohort.len(),
        records.len(),
        args.out.display()
    );
    Ok(())
}
