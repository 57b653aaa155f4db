use std::path::PathBuf;

use clap::Parser;

use sepsis_hmm::inference::{map_params, sort_states_by_severity};
use sepsis_hmm::io::{read_posterior, write_params};

use super::CliError;

#[derive(Parser, Debug)]
pub struct Args {
    /// Input posterior file.
    #[arg(long)]
    posterior: PathBuf,

    /// Output parameters file.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let chain = read_posterior(&args.posterior)?;
    let map = map_params(&chain)?;
    // Reporting convention: severity states ordered by heart-rate mean.
    let map = sort_states_by_severity(&map);
    write_params(&args.out, &map)?;
    eprintln!(
        "marginal MAP from {} samples -> {}",
        chain.samples.len(),
        args.out.display()
    );
    Ok(())
}
