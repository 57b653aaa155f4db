use std::path::PathBuf;

use clap::Parser;

use sepsis_hmm::analysis::{
    conditional_histograms, js_divergence, severity_positive_rates, FractionMetric, MetricKind,
    TrajectoryRecord,
};
use sepsis_hmm::criteria::{segments_from_flags, Criterion};
use sepsis_hmm::io::{
    read_trajectories, write_histograms, write_jsd_report, write_metrics, write_monotonicity,
    write_overlap_summary, write_overlaps, JsdReport, OverlapRow,
};
use sepsis_hmm::{Outcome, TransientState};

use crate::config::FileConfig;

use super::CliError;

#[derive(Parser, Debug)]
pub struct Args {
    /// Decoded trajectory CSV (from `decode`).
    #[arg(long)]
    trajectories: PathBuf,

    /// Directory for the report files.
    #[arg(long)]
    out_dir: PathBuf,

    /// Histogram bins over [0, 1].
    #[arg(long)]
    bins: Option<usize>,
}

struct EpisodeView {
    id: String,
    outcome: Outcome,
    states: Vec<TransientState>,
    sepsis1: Vec<bool>,
    qsofa: Vec<bool>,
}

fn group_episodes(records: &[TrajectoryRecord]) -> Result<Vec<EpisodeView>, CliError> {
    let mut out: Vec<EpisodeView> = Vec::new();
    for r in records {
        let matches_last = out.last().map(|e| e.id == r.episode_id).unwrap_or(false);
        if !matches_last {
            if r.interval != 0 {
                return Err(CliError::Parse(format!(
                    "episode {} does not start at interval 0",
                    r.episode_id
                )));
            }
            out.push(EpisodeView {
                id: r.episode_id.clone(),
                outcome: r.outcome,
                states: vec![],
                sepsis1: vec![],
                qsofa: vec![],
            });
        }
        let ep = out.last_mut().unwrap();
        if r.interval != ep.states.len() {
            return Err(CliError::Parse(format!(
                "episode {} has a non-contiguous interval index {}",
                r.episode_id, r.interval
            )));
        }
        ep.states.push(r.state);
        ep.sepsis1.push(r.sepsis1);
        ep.qsofa.push(r.qsofa);
    }
    if out.is_empty() {
        return Err(CliError::Validation(
            "trajectory file contains no records".into(),
        ));
    }
    Ok(out)
}

pub fn run(args: Args, file: &FileConfig) -> Result<(), CliError> {
    let n_bins = args.bins.or(file.analyze.bins).unwrap_or(20);
    let records = read_trajectories(&args.trajectories)?;
    let episodes = group_episodes(&records)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;

    // Fraction-of-time metrics for all three summaries.
    let mut metrics = Vec::new();
    for ep in &episodes {
        let t = ep.states.len() as f64;
        let frac = |flags: &[bool]| flags.iter().filter(|&&f| f).count() as f64 / t;
        let s3: Vec<bool> = ep.states.iter().map(|s| *s == TransientState::S3).collect();
        for (kind, value) in [
            (MetricKind::Sepsis1, frac(&ep.sepsis1)),
            (MetricKind::Qsofa, frac(&ep.qsofa)),
            (MetricKind::S3, frac(&s3)),
        ] {
            metrics.push(FractionMetric {
                episode_id: ep.id.clone(),
                kind,
                value,
                outcome: ep.outcome,
            });
        }
    }
    write_metrics(&args.out_dir.join("metrics.csv"), &metrics)?;

    // Outcome-conditioned histograms and their divergences.
    let mut pairs = Vec::new();
    let mut jsd = [0.0f64; 3];
    let (mut n_discharged, mut n_died) = (0usize, 0usize);
    for (i, kind) in MetricKind::ALL.iter().enumerate() {
        let subset: Vec<FractionMetric> = metrics
            .iter()
            .filter(|m| m.kind == *kind)
            .cloned()
            .collect();
        let hist = conditional_histograms(&subset, n_bins)?;
        let (p, q) = hist.masses();
        jsd[i] = js_divergence(&p, &q)?;
        n_discharged = hist.n_discharged;
        n_died = hist.n_died;
        pairs.push((*kind, hist));
    }
    write_histograms(&args.out_dir.join("histograms.csv"), &pairs)?;
    let report = JsdReport {
        n_bins,
        n_discharged,
        n_died,
        sepsis1: jsd[0],
        qsofa: jsd[1],
        s3: jsd[2],
    };
    write_jsd_report(&args.out_dir.join("jsd_report.toml"), &report)?;

    // Segment overlap between decoded S3 runs and each criterion's runs.
    let mut overlap_rows = Vec::new();
    for ep in &episodes {
        let t = ep.states.len();
        let s3_flags: Vec<bool> = ep.states.iter().map(|s| *s == TransientState::S3).collect();
        let s3_segments = segments_from_flags(&s3_flags);
        for (criterion, flags) in [(Criterion::Sepsis1, &ep.sepsis1), (Criterion::Qsofa, &ep.qsofa)]
        {
            let segs = segments_from_flags(flags);
            let (jaccard, cov_s3, cov_crit) =
                sepsis_hmm::analysis::overlap_stats(&s3_segments, &segs, t)?;
            overlap_rows.push(OverlapRow {
                episode_id: ep.id.clone(),
                criterion,
                jaccard,
                s3_covered_by_criterion: cov_s3,
                criterion_covered_by_s3: cov_crit,
            });
        }
    }
    write_overlaps(&args.out_dir.join("overlaps.csv"), &overlap_rows)?;
    write_overlap_summary(&args.out_dir.join("overlap_summary.csv"), &overlap_rows)?;

    // Criteria-positive rates by decoded severity.
    let decoded: Vec<Vec<TransientState>> = episodes.iter().map(|e| e.states.clone()).collect();
    let sepsis1_flags: Vec<Vec<bool>> = episodes.iter().map(|e| e.sepsis1.clone()).collect();
    let qsofa_flags: Vec<Vec<bool>> = episodes.iter().map(|e| e.qsofa.clone()).collect();
    let rates = vec![
        (
            Criterion::Sepsis1,
            severity_positive_rates(&decoded, &sepsis1_flags)?,
        ),
        (
            Criterion::Qsofa,
            severity_positive_rates(&decoded, &qsofa_flags)?,
        ),
    ];
    write_monotonicity(&args.out_dir.join("monotonicity.csv"), &rates)?;

    println!(
        "jsd sepsis1={:.6} qsofa={:.6} s3={:.6} (nats, {} bins, {} discharged, {} died)",
        report.sepsis1, report.qsofa, report.s3, n_bins, n_discharged, n_died
    );
    Ok(())
}
