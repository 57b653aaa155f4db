//! Outcome-discrimination analysis and trajectory export.
//!
//! For each patient we summarize the fraction of hospitalization intervals on
//! which sepsis-1 held, qSOFA held, or the decoded state was S3; histogram
//! those fractions conditioned on outcome; and compare the discharged/died
//! pairs by Jensen-Shannon divergence (natural log). Segment overlap metrics
//! relate decoded S3 runs to criteria runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::CriteriaSegments;
use crate::model::{Covariates, Outcome, PatientEpisode, TransientState, VitalSigns};

/// What a fraction-of-time metric measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Sepsis1,
    Qsofa,
    S3,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Sepsis1, MetricKind::Qsofa, MetricKind::S3];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Sepsis1 => "sepsis1",
            MetricKind::Qsofa => "qsofa",
            MetricKind::S3 => "s3",
        }
    }

    pub fn parse(s: &str) -> Option<MetricKind> {
        match s {
            "sepsis1" => Some(MetricKind::Sepsis1),
            "qsofa" => Some(MetricKind::Qsofa),
            "s3" => Some(MetricKind::S3),
            _ => None,
        }
    }
}

/// Fraction of an episode's intervals on which one metric held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionMetric {
    pub episode_id: String,
    pub kind: MetricKind,
    pub value: f64,
    pub outcome: Outcome,
}

/// Unit-area histograms of a fraction metric for the two outcome groups over
/// shared uniform bins on `[0, 1]` (final bin right-closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalHistogramPair {
    pub edges: Vec<f64>,
    pub density_discharged: Vec<f64>,
    pub density_died: Vec<f64>,
    pub n_discharged: usize,
    pub n_died: usize,
}

impl ConditionalHistogramPair {
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Per-bin probability masses (density times width).
    pub fn masses(&self) -> (Vec<f64>, Vec<f64>) {
        let w = |i: usize| self.edges[i + 1] - self.edges[i];
        let p = (0..self.n_bins())
            .map(|i| self.density_discharged[i] * w(i))
            .collect();
        let q = (0..self.n_bins())
            .map(|i| self.density_died[i] * w(i))
            .collect();
        (p, q)
    }
}

/// Analysis errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no episodes in the {0} group")]
    EmptyGroup(&'static str),
    #[error("metrics of mixed kinds passed to a single histogram")]
    MixedKinds,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("distribution not normalized: {0}")]
    NotNormalized(String),
    #[error("segment {0:?} out of range for horizon {1}")]
    SegmentOutOfRange((usize, usize), usize),
}

/// Fraction of flagged intervals, `count(true) / T`.
pub fn fraction_flagged(episode: &PatientEpisode, flags: &[bool]) -> Result<f64, AnalysisError> {
    if flags.len() != episode.len() || episode.is_empty() {
        return Err(AnalysisError::LengthMismatch(format!(
            "episode {} has {} intervals but {} flags",
            episode.episode_id,
            episode.len(),
            flags.len()
        )));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Histogram the metric values by outcome. Censored episodes are excluded;
/// an empty discharged or died group is an error.
pub fn conditional_histograms(
    metrics: &[FractionMetric],
    n_bins: usize,
) -> Result<ConditionalHistogramPair, AnalysisError> {
    if n_bins == 0 {
        return Err(AnalysisError::NoBins);
    }
    if let Some(first) = metrics.first() {
        if metrics.iter().any(|m| m.kind != first.kind) {
            return Err(AnalysisError::MixedKinds);
        }
    }
    let mut counts_discharged = vec![0u64; n_bins];
    let mut counts_died = vec![0u64; n_bins];
    let (mut n_discharged, mut n_died) = (0usize, 0usize);
    for m in metrics {
        let target = match m.outcome {
            Outcome::Discharged => {
                n_discharged += 1;
                &mut counts_discharged
            }
            Outcome::Died => {
                n_died += 1;
                &mut counts_died
            }
            Outcome::Censored => continue,
        };
        // Right-closed final bin so a value of exactly 1 lands inside.
        let bin = ((m.value * n_bins as f64).floor() as usize).min(n_bins - 1);
        target[bin] += 1;
    }
    if n_discharged == 0 {
        return Err(AnalysisError::EmptyGroup("discharged"));
    }
    if n_died == 0 {
        return Err(AnalysisError::EmptyGroup("died"));
    }
    let width = 1.0 / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * width).collect();
    let to_density = |counts: &[u64], n: usize| {
        counts
            .iter()
            .map(|&c| c as f64 / n as f64 / width)
            .collect::<Vec<f64>>()
    };
    Ok(ConditionalHistogramPair {
        edges,
        density_discharged: to_density(&counts_discharged, n_discharged),
        density_died: to_density(&counts_died, n_died),
        n_discharged,
        n_died,
    })
}

/// Jensen-Shannon divergence between two probability mass vectors over shared
/// bins, in nats: `JSD = KL(p||m)/2 + KL(q||m)/2` with `m = (p+q)/2` and the
/// `0 ln 0` convention. Bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64, AnalysisError> {
    if p.len() != q.len() {
        return Err(AnalysisError::LengthMismatch(format!(
            "p has {} bins, q has {}",
            p.len(),
            q.len()
        )));
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if dist.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(AnalysisError::NotNormalized(format!(
                "{name} has negative or non-finite mass"
            )));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AnalysisError::NotNormalized(format!(
                "{name} sums to {total}"
            )));
        }
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += 0.5 * pi * (pi / mi).ln();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (qi / mi).ln();
        }
    }
    Ok(acc)
}

/// Interval-set overlap between two segment lists over `[0, T)`:
/// Jaccard `|A∩B| / |A∪B|` plus both directional coverage fractions. Empty
/// reference sets count as fully covered; two empty sets are identical.
pub fn overlap_stats(
    a: &CriteriaSegments,
    b: &CriteriaSegments,
    horizon: usize,
) -> Result<(f64, f64, f64), AnalysisError> {
    for segs in [a, b] {
        if !segs.is_valid_for(horizon) {
            let bad = segs
                .segments
                .iter()
                .find(|&&(s, e)| s >= e || e > horizon)
                .copied()
                .unwrap_or((0, 0));
            return Err(AnalysisError::SegmentOutOfRange(bad, horizon));
        }
    }
    let fa = a.expand(horizon);
    let fb = b.expand(horizon);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in fa.iter().zip(&fb) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    let ca = a.covered();
    let cb = b.covered();
    let jaccard = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    let cov_a = if ca == 0 { 1.0 } else { inter as f64 / ca as f64 };
    let cov_b = if cb == 0 { 1.0 } else { inter as f64 / cb as f64 };
    Ok((jaccard, cov_a, cov_b))
}

/// Fraction of intervals flagged positive among intervals decoded into each
/// severity state; `None` where a state never occurs.
pub fn severity_positive_rates(
    decoded: &[Vec<TransientState>],
    flags: &[Vec<bool>],
) -> Result<[Option<f64>; 3], AnalysisError> {
    if decoded.len() != flags.len() {
        return Err(AnalysisError::LengthMismatch(format!(
            "{} decoded episodes vs {} flag vectors",
            decoded.len(),
            flags.len()
        )));
    }
    let mut pos = [0u64; 3];
    let mut tot = [0u64; 3];
    for (zs, fs) in decoded.iter().zip(flags) {
        if zs.len() != fs.len() {
            return Err(AnalysisError::LengthMismatch(
                "decoded path and flag vector differ in length".into(),
            ));
        }
        for (z, &f) in zs.iter().zip(fs) {
            tot[z.index()] += 1;
            pos[z.index()] += f as u64;
        }
    }
    let mut out = [None; 3];
    for k in 0..3 {
        if tot[k] > 0 {
            out[k] = Some(pos[k] as f64 / tot[k] as f64);
        }
    }
    Ok(out)
}

/// One interval of a decoded trajectory, flattened for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode_id: String,
    pub interval: usize,
    pub vitals: VitalSigns,
    pub state: TransientState,
    pub state_probabilities: [f64; 3],
    pub sepsis1: bool,
    pub qsofa: bool,
    pub outcome: Outcome,
    pub covariates: Covariates,
}

/// Join an episode with its decode result and criteria flags into per-interval
/// records ready for plotting or serialization.
pub fn trajectory_records(
    episode: &PatientEpisode,
    decoded: &crate::inference::DecodeResult,
    sepsis1: &[bool],
    qsofa: &[bool],
) -> Result<Vec<TrajectoryRecord>, AnalysisError> {
    let t = episode.len();
    if decoded.map_states.len() != t
        || decoded.probabilities.len() != t
        || sepsis1.len() != t
        || qsofa.len() != t
    {
        return Err(AnalysisError::LengthMismatch(format!(
            "episode {} trajectory inputs are misaligned",
            episode.episode_id
        )));
    }
    Ok((0..t)
        .map(|i| TrajectoryRecord {
            episode_id: episode.episode_id.clone(),
            interval: i,
            vitals: episode.intervals[i],
            state: decoded.map_states[i],
            state_probabilities: decoded.probabilities[i],
            sepsis1: sepsis1[i],
            qsofa: qsofa[i],
            outcome: episode.outcome,
            covariates: episode.covariates,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::segments_from_flags;
    use crate::model::Covariates;
    use approx::assert_abs_diff_eq;

    fn episode(t: usize) -> PatientEpisode {
        PatientEpisode {
            episode_id: "e".into(),
            covariates: Covariates::from_array([0.0; 3]),
            intervals: vec![VitalSigns::from_array([120.0, 60.0, 80.0, 18.0, 98.0]); t],
            outcome: Outcome::Discharged,
        }
    }

    #[test]
    fn fraction_flagged_counts_true_over_t() {
        let ep = episode(4);
        assert_eq!(
            fraction_flagged(&ep, &[true, false, false, false]).unwrap(),
            0.25
        );
        assert_eq!(fraction_flagged(&ep, &[false; 4]).unwrap(), 0.0);
        assert_eq!(fraction_flagged(&ep, &[true; 4]).unwrap(), 1.0);
        assert!(fraction_flagged(&ep, &[true; 3]).is_err());
    }

    #[test]
    fn histogram_of_extreme_singletons() {
        let metrics = vec![
            FractionMetric {
                episode_id: "a".into(),
                kind: MetricKind::S3,
                value: 0.0,
                outcome: Outcome::Discharged,
            },
            FractionMetric {
                episode_id: "b".into(),
                kind: MetricKind::S3,
                value: 1.0,
                outcome: Outcome::Died,
            },
        ];
        let h = conditional_histograms(&metrics, 2).unwrap();
        assert_eq!(h.density_discharged, vec![2.0, 0.0]);
        assert_eq!(h.density_died, vec![0.0, 2.0]);
        let (p, q) = h.masses();
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_groups_give_identical_densities_and_zero_jsd() {
        let mut metrics = Vec::new();
        for (i, v) in [0.1, 0.4, 0.7].iter().enumerate() {
            for outcome in [Outcome::Discharged, Outcome::Died] {
                metrics.push(FractionMetric {
                    episode_id: format!("e{i}"),
                    kind: MetricKind::Qsofa,
                    value: *v,
                    outcome,
                });
            }
        }
        let h = conditional_histograms(&metrics, 10).unwrap();
        assert_eq!(h.density_discharged, h.density_died);
        let (p, q) = h.masses();
        assert_eq!(js_divergence(&p, &q).unwrap(), 0.0);
    }

    #[test]
    fn missing_group_is_named() {
        let metrics = vec![FractionMetric {
            episode_id: "a".into(),
            kind: MetricKind::S3,
            value: 0.5,
            outcome: Outcome::Discharged,
        }];
        match conditional_histograms(&metrics, 4) {
            Err(AnalysisError::EmptyGroup(g)) => assert_eq!(g, "died"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn histogram_masses_recount_group_sizes() {
        let mut metrics = Vec::new();
        for i in 0..37 {
            metrics.push(FractionMetric {
                episode_id: format!("d{i}"),
                kind: MetricKind::Sepsis1,
                value: (i as f64) / 37.0,
                outcome: Outcome::Discharged,
            });
        }
        for i in 0..11 {
            metrics.push(FractionMetric {
                episode_id: format!("x{i}"),
                kind: MetricKind::Sepsis1,
                value: (i as f64) / 11.0,
                outcome: Outcome::Died,
            });
        }
        let h = conditional_histograms(&metrics, 20).unwrap();
        let w = 1.0 / 20.0;
        let mass_d: f64 = h.density_discharged.iter().map(|d| d * w).sum();
        let mass_x: f64 = h.density_died.iter().map(|d| d * w).sum();
        // Unit area per group regardless of group size.
        assert_abs_diff_eq!(mass_d, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mass_x, 1.0, epsilon = 1e-12);
        // Undo the normalization to recover the raw counts.
        let count_d: f64 = h
            .density_discharged
            .iter()
            .map(|d| d * w * h.n_discharged as f64)
            .sum();
        assert_abs_diff_eq!(count_d, 37.0, epsilon = 1e-9);
    }

    #[test]
    fn jsd_disjoint_supports_is_ln2() {
        let p = [0.5, 0.5, 0.0, 0.0];
        let q = [0.0, 0.0, 0.25, 0.75];
        assert_abs_diff_eq!(
            js_divergence(&p, &q).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn jsd_simple_pair_matches_hand_evaluation() {
        let p = [0.5, 0.5];
        let q = [1.0, 0.0];
        // m = (0.75, 0.25); KL(p||m) and KL(q||m) summed by hand.
        let kl_pm = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        let kl_qm = 1.0 * (1.0f64 / 0.75).ln();
        let expected = 0.5 * kl_pm + 0.5 * kl_qm;
        assert_abs_diff_eq!(js_divergence(&p, &q).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn jsd_rejects_unnormalized_input() {
        assert!(js_divergence(&[0.5, 0.4], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn overlap_of_identical_and_disjoint_sets() {
        let a = segments_from_flags(&[true, true, false, false]);
        let b = segments_from_flags(&[false, false, true, true]);
        assert_eq!(overlap_stats(&a, &a, 4).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(overlap_stats(&a, &b, 4).unwrap(), (0.0, 0.0, 0.0));
        let empty = CriteriaSegments::default();
        assert_eq!(overlap_stats(&empty, &empty, 4).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn overlap_partial_ranges() {
        let a = CriteriaSegments {
            segments: vec![(0, 4)],
        };
        let b = CriteriaSegments {
            segments: vec![(2, 6)],
        };
        let (j, ca, cb) = overlap_stats(&a, &b, 8).unwrap();
        assert_abs_diff_eq!(j, 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ca, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cb, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn overlap_rejects_out_of_range_segments() {
        let a = CriteriaSegments {
            segments: vec![(0, 9)],
        };
        assert!(overlap_stats(&a, &CriteriaSegments::default(), 8).is_err());
    }

    #[test]
    fn severity_rates_handle_absent_states() {
        let decoded = vec![vec![TransientState::S3, TransientState::S3]];
        let flags = vec![vec![true, true]];
        let rates = severity_positive_rates(&decoded, &flags).unwrap();
        assert_eq!(rates, [None, None, Some(1.0)]);
    }
}
