//! Vital-sign portions of the sepsis-1 (SIRS) and qSOFA diagnostic rules,
//! evaluated pointwise at each six-hour interval.
//!
//! SIRS conditions evaluable from the five vitals (strict inequalities):
//! heart rate > 90/min, respiratory rate > 20/min, temperature < 96.8 F or
//! > 100.4 F. Sepsis-1 is met when at least two of those three hold; the
//! laboratory conditions (WBC, PaCO2) are not observed here and the infection
//! requirement is taken as satisfied cohort-wide.
//!
//! qSOFA (non-strict): systolic blood pressure <= 100 mm Hg AND respiratory
//! rate >= 22/min. Both observable items are required; the mentation item is
//! not observed.

use serde::{Deserialize, Serialize};

use crate::model::{PatientEpisode, VitalSigns};

/// Which diagnostic rule to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    Sepsis1,
    Qsofa,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Sepsis1 => "sepsis1",
            Criterion::Qsofa => "qsofa",
        }
    }
}

/// Per-interval rule flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaFlags {
    pub sirs_hr: bool,
    pub sirs_rr: bool,
    pub sirs_temp: bool,
    pub sepsis1_met: bool,
    pub qsofa_sbp: bool,
    pub qsofa_rr: bool,
    pub qsofa_met: bool,
}

/// The three evaluable SIRS conditions, as `(hr, rr, temp)` flags.
pub fn sirs_flags(x: &VitalSigns) -> (bool, bool, bool) {
    let hr = x.heart_rate > 90.0;
    let rr = x.respiratory_rate > 20.0;
    let temp = x.temperature < 96.8 || x.temperature > 100.4;
    (hr, rr, temp)
}

/// Sepsis-1: at least two of the three evaluable SIRS conditions.
pub fn sepsis1_met(x: &VitalSigns) -> bool {
    let (hr, rr, temp) = sirs_flags(x);
    (hr as u8 + rr as u8 + temp as u8) >= 2
}

/// qSOFA with both observable items required.
pub fn qsofa_met(x: &VitalSigns) -> bool {
    x.systolic_bp <= 100.0 && x.respiratory_rate >= 22.0
}

/// All flags for one interval.
pub fn criteria_flags(x: &VitalSigns) -> CriteriaFlags {
    let (sirs_hr, sirs_rr, sirs_temp) = sirs_flags(x);
    let qsofa_sbp = x.systolic_bp <= 100.0;
    let qsofa_rr = x.respiratory_rate >= 22.0;
    CriteriaFlags {
        sirs_hr,
        sirs_rr,
        sirs_temp,
        sepsis1_met: (sirs_hr as u8 + sirs_rr as u8 + sirs_temp as u8) >= 2,
        qsofa_sbp,
        qsofa_rr,
        qsofa_met: qsofa_sbp && qsofa_rr,
    }
}

/// Maximal runs of intervals on which a criterion holds, as sorted, disjoint,
/// non-adjacent half-open ranges `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CriteriaSegments {
    pub segments: Vec<(usize, usize)>,
}

impl CriteriaSegments {
    /// Total number of flagged intervals.
    pub fn covered(&self) -> usize {
        self.segments.iter().map(|(s, e)| e - s).sum()
    }

    /// Reconstruct the flag vector for horizon `t`.
    pub fn expand(&self, t: usize) -> Vec<bool> {
        let mut flags = vec![false; t];
        for &(s, e) in &self.segments {
            for f in flags[s..e].iter_mut() {
                *f = true;
            }
        }
        flags
    }

    /// Structural checks against a horizon `t`: sorted, disjoint,
    /// non-adjacent, non-empty ranges inside `[0, t)`.
    pub fn is_valid_for(&self, t: usize) -> bool {
        let mut prev_end: Option<usize> = None;
        for &(s, e) in &self.segments {
            if s >= e || e > t {
                return false;
            }
            if let Some(pe) = prev_end {
                if s <= pe {
                    return false;
                }
            }
            prev_end = Some(e);
        }
        true
    }
}

/// Run-length encode a flag vector into maximal segments.
pub fn segments_from_flags(flags: &[bool]) -> CriteriaSegments {
    let mut segments = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segments.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push((s, flags.len()));
    }
    CriteriaSegments { segments }
}

/// Segments over an episode for the given rule.
pub fn criteria_segments(episode: &PatientEpisode, which: Criterion) -> CriteriaSegments {
    let flags: Vec<bool> = episode
        .intervals
        .iter()
        .map(|x| match which {
            Criterion::Sepsis1 => sepsis1_met(x),
            Criterion::Qsofa => qsofa_met(x),
        })
        .collect();
    segments_from_flags(&flags)
}
