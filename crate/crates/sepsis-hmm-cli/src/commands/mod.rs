//! Subcommand implementations and the error-to-exit-code mapping.

pub mod analyze;
pub mod criteria;
pub mod decode;
pub mod fit;
pub mod map_estimate;
pub mod simulate;

use sepsis_hmm::analysis::AnalysisError;
use sepsis_hmm::inference::InferenceError;
use sepsis_hmm::io::IoError;
use sepsis_hmm::sim::SimError;

/// CLI-level errors with machine-readable categories.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Validation(String),
    Infeasible(String),
    Internal(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::Validation(_) => "validation",
            CliError::Infeasible(_) => "infeasible",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 3,
            CliError::Parse(_) => 4,
            CliError::Validation(_) => 5,
            CliError::Infeasible(_) => 6,
            CliError::Internal(_) => 7,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m)
            | CliError::Parse(m)
            | CliError::Validation(m)
            | CliError::Infeasible(m)
            | CliError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> CliError {
        match e {
            IoError::Io(_) => CliError::Io(e.to_string()),
            IoError::Parse { .. } | IoError::SchemaVersion { .. } | IoError::Format { .. } => {
                CliError::Parse(e.to_string())
            }
            IoError::Validation(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        match e {
            SimError::InvalidSpec(_) => CliError::Validation(e.to_string()),
            SimError::InfeasiblePatient { .. } | SimError::Model(_) => {
                CliError::Infeasible(e.to_string())
            }
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> CliError {
        match e {
            InferenceError::InvalidConfig(_)
            | InferenceError::InvalidCohort(_)
            | InferenceError::TooFewSamples(_)
            | InferenceError::CheckpointMismatch(_) => CliError::Validation(e.to_string()),
            InferenceError::InitializationFailed(_) | InferenceError::Model(_) => {
                CliError::Infeasible(e.to_string())
            }
            InferenceError::ImpossiblePath { .. } => CliError::Internal(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> CliError {
        CliError::Validation(e.to_string())
    }
}
