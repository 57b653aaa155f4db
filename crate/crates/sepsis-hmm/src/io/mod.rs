//! File formats: episode/true-state CSVs, the params key-value tree, the
//! line-per-sample posterior file, checkpoints, raw-observation binning, and
//! analysis exports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! format is value-exact under write-then-read.

mod episodes;
mod exports;
mod ingest;
mod params_file;
mod posterior;
mod sidecar;

pub use episodes::{
    read_episodes, read_true_states, write_episodes, write_true_states,
};
pub use exports::{
    read_flags, read_trajectories, write_flags, write_histograms, write_jsd_report,
    write_metrics, write_monotonicity, write_overlap_summary, write_overlaps,
    write_trajectories, JsdReport, OverlapRow,
};
pub use ingest::{bin_observations, RawObservation, RejectReason, Rejection};
pub use params_file::{read_params, write_params};
pub use posterior::{
    read_checkpoint, read_posterior, write_checkpoint, write_posterior, PosteriorFileOptions,
};
pub use sidecar::{read_standardization, write_standardization};

use thiserror::Error;

/// I/O and format errors.
#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: schema version {found} (this build reads version {expected})")]
    SchemaVersion {
        path: String,
        found: i64,
        expected: i64,
    },
    #[error("invalid data: {0}")]
    Validation(String),
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub(crate) fn parse_f64(s: &str, path: &str, line: usize, what: &str) -> Result<f64, IoError> {
    s.trim().parse::<f64>().map_err(|_| IoError::Parse {
        path: path.to_string(),
        line,
        msg: format!("{what}: cannot parse '{s}' as a number"),
    })
}

pub(crate) fn parse_usize(s: &str, path: &str, line: usize, what: &str) -> Result<usize, IoError> {
    s.trim().parse::<usize>().map_err(|_| IoError::Parse {
        path: path.to_string(),
        line,
        msg: format!("{what}: cannot parse '{s}' as an integer"),
    })
}
