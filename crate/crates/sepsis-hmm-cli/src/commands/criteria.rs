use std::path::PathBuf;

use clap::Parser;

use sepsis_hmm::criteria::criteria_flags;
use sepsis_hmm::io::{read_episodes, write_flags};

use super::CliError;

#[derive(Parser, Debug)]
pub struct Args {
    /// Input episode CSV.
    #[arg(long)]
    episodes: PathBuf,

    /// Output per-interval flags CSV.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let cohort = read_episodes(&args.episodes)?;
    let per_episode: Vec<_> = cohort
        .iter()
        .map(|ep| {
            (
                ep.episode_id.clone(),
                ep.intervals.iter().map(criteria_flags).collect(),
            )
        })
        .collect();
    write_flags(&args.out, &per_episode)?;
    eprintln!(
        "flagged {} episodes -> {}",
        per_episode.len(),
        args.out.display()
    );
    Ok(())
}
