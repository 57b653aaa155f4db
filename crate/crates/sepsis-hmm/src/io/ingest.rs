//! Raw observation ingestion: six-hour binning with bounded forward fill.
//!
//! Interval `t` covers minutes `[360t, 360(t+1))`. Within a bin each vital is
//! the arithmetic mean of its observations; a vital missing from a bin is
//! carried forward from the most recent earlier bin, but across at most two
//! consecutive bins. Anything unfillable rejects the episode.

use thiserror::Error;

use crate::model::{Covariates, Outcome, PatientEpisode, VitalSigns, VITAL_COLUMNS, VITAL_COUNT};

/// Minutes per bin.
pub const INTERVAL_MINUTES: u64 = 360;
/// Longest run of empty bins a value may be carried across.
pub const MAX_FILL_RUN: usize = 2;

/// One raw reading: minutes from admission, the canonical short vital name
/// (`sbp`, `dbp`, `hr`, `rr`, `temp`), and the value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub episode_id: String,
    pub timestamp_min: u64,
    pub vital: String,
    pub value: f64,
}

/// Why an episode could not be binned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    NoObservations,
    MixedEpisodeIds,
    UnknownVital { name: String },
    NonFiniteValue { interval: usize, vital: &'static str },
    UnfillableCell { interval: usize, vital: &'static str },
    InvalidVitals { interval: usize, violation: String },
}

/// Episode-level rejection carrying the first offending cell.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("episode {episode_id} rejected: {reason:?}")]
pub struct Rejection {
    pub episode_id: String,
    pub reason: RejectReason,
}

fn vital_index(name: &str) -> Option<usize> {
    VITAL_COLUMNS.iter().position(|v| *v == name)
}

/// Bin one episode's observations into six-hour intervals.
pub fn bin_observations(
    observations: &[RawObservation],
    outcome: Outcome,
    covariates: Covariates,
) -> Result<PatientEpisode, Rejection> {
    let episode_id = match observations.first() {
        Some(o) => o.episode_id.clone(),
        None => {
            return Err(Rejection {
                episode_id: String::new(),
                reason: RejectReason::NoObservations,
            })
        }
    };
    let reject = |reason: RejectReason| Rejection {
        episode_id: episode_id.clone(),
        reason,
    };

    let mut t_max = 0usize;
    for o in observations {
        if o.episode_id != episode_id {
            return Err(reject(RejectReason::MixedEpisodeIds));
        }
        if vital_index(&o.vital).is_none() {
            return Err(reject(RejectReason::UnknownVital {
                name: o.vital.clone(),
            }));
        }
        t_max = t_max.max((o.timestamp_min / INTERVAL_MINUTES) as usize);
    }
    let t_len = t_max + 1;

    let mut sums = vec![[0.0f64; VITAL_COUNT]; t_len];
    let mut counts = vec![[0u32; VITAL_COUNT]; t_len];
    for o in observations {
        let t = (o.timestamp_min / INTERVAL_MINUTES) as usize;
        let d = vital_index(&o.vital).unwrap();
        sums[t][d] += o.value;
        counts[t][d] += 1;
    }

    let mut grid = vec![[0.0f64; VITAL_COUNT]; t_len];
    for d in 0..VITAL_COUNT {
        let mut last: Option<(usize, f64)> = None; // (interval, value)
        for t in 0..t_len {
            if counts[t][d] > 0 {
                let mean = sums[t][d] / counts[t][d] as f64;
                if !mean.is_finite() {
                    return Err(reject(RejectReason::NonFiniteValue {
                        interval: t,
                        vital: VITAL_COLUMNS[d],
                    }));
                }
                grid[t][d] = mean;
                last = Some((t, mean));
            } else {
                match last {
                    Some((t0, value)) if t - t0 <= MAX_FILL_RUN => grid[t][d] = value,
                    _ => {
                        return Err(reject(RejectReason::UnfillableCell {
                            interval: t,
                            vital: VITAL_COLUMNS[d],
                        }))
                    }
                }
            }
        }
    }

    let intervals: Vec<VitalSigns> = grid.into_iter().map(VitalSigns::from_array).collect();
    for (t, x) in intervals.iter().enumerate() {
        let violations = x.violations();
        if let Some(v) = violations.first() {
            return Err(reject(RejectReason::InvalidVitals {
                interval: t,
                violation: v.to_string(),
            }));
        }
    }
    Ok(PatientEpisode {
        episode_id,
        covariates,
        intervals,
        outcome,
    })
}
