//! A five-state, covariate-modulated hidden Markov model of sepsis
//! progression over six-hour vital-sign intervals.
//!
//! The chain runs discharge (`G`), three latent severity states
//! (`S1 < S2 < S3`), and death (`D`), with proportional-hazards transition
//! probabilities driven by three standardized patient covariates and
//! diagonal-Gaussian vital-sign emissions from the severity states.
//!
//! Crate layout:
//!
//! - [`model`]: domain types, per-patient transition matrices, emission
//!   densities, parameter validation.
//! - [`sim`]: forward simulation of synthetic cohorts from known parameters.
//! - [`criteria`]: pointwise sepsis-1 (SIRS) and qSOFA vital-sign rules and
//!   their maximal segments.
//! - [`inference`]: the Metropolis-Hastings-within-Gibbs sampler, KDE-based
//!   marginal MAP extraction, and held-out trajectory decoding.
//! - [`analysis`]: fraction-of-time metrics, outcome-conditioned histograms,
//!   Jensen-Shannon divergence, and segment-overlap statistics.
//! - [`io`]: file formats and raw-observation binning.
//!
//! Everything that draws randomness is keyed by explicit seeds and derived
//! substreams; results are bitwise reproducible across runs and thread
//! counts.

pub mod analysis;
pub mod criteria;
pub mod inference;
pub mod io;
pub mod model;
mod rng;
pub mod sim;

pub use model::{
    Covariates, EmissionParams, LatentState, ModelParams, Outcome, PatientEpisode,
    TransientState, TransitionParams, VitalSigns,
};
