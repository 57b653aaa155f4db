//! Analysis export formats: decoded trajectories, per-interval criteria
//! flags, fraction metrics, conditional histograms, the divergence report,
//! and segment-overlap tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::analysis::{ConditionalHistogramPair, FractionMetric, MetricKind, TrajectoryRecord};
use crate::criteria::CriteriaFlags;
use crate::model::{Covariates, Outcome, TransientState, VitalSigns};

use super::{fmt_f64, parse_f64, parse_usize, IoError};

const TRAJECTORY_HEADER: &str = "episode_id,interval_index,sbp,dbp,hr,rr,temp,state,\
p_s1,p_s2,p_s3,sepsis1,qsofa,outcome,age_z,laps2_z,cops2_z";
const FLAGS_HEADER: &str =
    "episode_id,interval_index,sirs_hr,sirs_rr,sirs_temp,sepsis1,qsofa_sbp,qsofa_rr,qsofa";
const METRICS_HEADER: &str = "episode_id,kind,value,outcome";
const HISTOGRAM_HEADER: &str = "kind,bin_start,bin_end,density_discharged,density_died";
const OVERLAP_HEADER: &str =
    "episode_id,criterion,jaccard,s3_covered_by_criterion,criterion_covered_by_s3";
const OVERLAP_SUMMARY_HEADER: &str = "criterion,n_episodes,mean_jaccard,\
mean_s3_covered_by_criterion,mean_criterion_covered_by_s3";
const MONOTONICITY_HEADER: &str = "criterion,rate_s1,rate_s2,rate_s3";

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn parse_bool(s: &str, path: &str, line: usize) -> Result<bool, IoError> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(IoError::Parse {
            path: path.to_string(),
            line,
            msg: format!("expected true/false, found '{other}'"),
        }),
    }
}

pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        let v = r.vitals.as_array();
        let c = r.covariates.as_array();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.episode_id,
            r.interval,
            fmt_f64(v[0]),
            fmt_f64(v[1]),
            fmt_f64(v[2]),
            fmt_f64(v[3]),
            fmt_f64(v[4]),
            r.state.as_str(),
            fmt_f64(r.state_probabilities[0]),
            fmt_f64(r.state_probabilities[1]),
            fmt_f64(r.state_probabilities[2]),
            fmt_bool(r.sepsis1),
            fmt_bool(r.qsofa),
            r.outcome.as_str(),
            fmt_f64(c[0]),
            fmt_f64(c[1]),
            fmt_f64(c[2]),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>, IoError> {
    let pstr = path.display().to_string();
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != TRAJECTORY_HEADER {
        return Err(IoError::Parse {
            path: pstr,
            line: 1,
            msg: "bad or missing trajectory header".into(),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return Err(IoError::Parse {
                path: pstr,
                line: line_no,
                msg: format!("expected 17 fields, found {}", f.len()),
            });
        }
        let mut vit = [0.0; 5];
        for (d, s) in f[2..7].iter().enumerate() {
            vit[d] = parse_f64(s, &pstr, line_no, "vital")?;
        }
        let state = TransientState::parse(f[7].trim()).ok_or_else(|| IoError::Parse {
            path: pstr.clone(),
            line: line_no,
            msg: format!("unknown state '{}'", f[7]),
        })?;
        let mut probs = [0.0; 3];
        for (k, s) in f[8..11].iter().enumerate() {
            probs[k] = parse_f64(s, &pstr, line_no, "state probability")?;
        }
        let outcome = Outcome::parse(f[13].trim()).ok_or_else(|| IoError::Parse {
            path: pstr.clone(),
            line: line_no,
            msg: format!("unknown outcome '{}'", f[13]),
        })?;
        let mut cov = [0.0; 3];
        for (j, s) in f[14..17].iter().enumerate() {
            cov[j] = parse_f64(s, &pstr, line_no, "covariate")?;
        }
        out.push(TrajectoryRecord {
            episode_id: f[0].to_string(),
            interval: parse_usize(f[1], &pstr, line_no, "interval_index")?,
            vitals: VitalSigns::from_array(vit),
            state,
            state_probabilities: probs,
            sepsis1: parse_bool(f[11], &pstr, line_no)?,
            qsofa: parse_bool(f[12], &pstr, line_no)?,
            outcome,
            covariates: Covariates::from_array(cov),
        });
    }
    Ok(out)
}

pub fn write_flags(
    path: &Path,
    per_episode: &[(String, Vec<CriteriaFlags>)],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{FLAGS_HEADER}")?;
    for (id, flags) in per_episode {
        for (t, fl) in flags.iter().enumerate() {
            writeln!(
                w,
                "{id},{t},{},{},{},{},{},{},{}",
                fmt_bool(fl.sirs_hr),
                fmt_bool(fl.sirs_rr),
                fmt_bool(fl.sirs_temp),
                fmt_bool(fl.sepsis1_met),
                fmt_bool(fl.qsofa_sbp),
                fmt_bool(fl.qsofa_rr),
                fmt_bool(fl.qsofa_met),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flags(path: &Path) -> Result<Vec<(String, Vec<CriteriaFlags>)>, IoError> {
    let pstr = path.display().to_string();
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != FLAGS_HEADER {
        return Err(IoError::Parse {
            path: pstr,
            line: 1,
            msg: "bad or missing flags header".into(),
        });
    }
    let mut out: Vec<(String, Vec<CriteriaFlags>)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(IoError::Parse {
                path: pstr,
                line: line_no,
                msg: format!("expected 9 fields, found {}", f.len()),
            });
        }
        let t = parse_usize(f[1], &pstr, line_no, "interval_index")?;
        let mut b = [false; 7];
        for (i, field) in f[2..9].iter().enumerate() {
            b[i] = parse_bool(field, &pstr, line_no)?;
        }
        let flags = CriteriaFlags {
            sirs_hr: b[0],
            sirs_rr: b[1],
            sirs_temp: b[2],
            sepsis1_met: b[3],
            qsofa_sbp: b[4],
            qsofa_rr: b[5],
            qsofa_met: b[6],
        };
        let matches_last = out.last().map(|(id, _)| id == f[0]).unwrap_or(false);
        if matches_last {
            let (_, v) = out.last_mut().unwrap();
            if t != v.len() {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("non-contiguous interval_index, expected {}", v.len()),
                });
            }
            v.push(flags);
        } else {
            if t != 0 {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: "new episode must start at interval_index 0".into(),
                });
            }
            out.push((f[0].to_string(), vec![flags]));
        }
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, metrics: &[FractionMetric]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(
            w,
            "{},{},{},{}",
            m.episode_id,
            m.kind.as_str(),
            fmt_f64(m.value),
            m.outcome.as_str()
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histograms(
    path: &Path,
    pairs: &[(MetricKind, ConditionalHistogramPair)],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HISTOGRAM_HEADER}")?;
    for (kind, h) in pairs {
        for i in 0..h.n_bins() {
            writeln!(
                w,
                "{},{},{},{},{}",
                kind.as_str(),
                fmt_f64(h.edges[i]),
                fmt_f64(h.edges[i + 1]),
                fmt_f64(h.density_discharged[i]),
                fmt_f64(h.density_died[i]),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Divergence report written as a small key-value tree.
#[derive(Debug, Clone, PartialEq)]
pub struct JsdReport {
    pub n_bins: usize,
    pub n_discharged: usize,
    pub n_died: usize,
    pub sepsis1: f64,
    pub qsofa: f64,
    pub s3: f64,
}

pub fn write_jsd_report(path: &Path, report: &JsdReport) -> Result<(), IoError> {
    let mut s = String::new();
    s.push_str("schema_version = 1\n");
    s.push_str("log_base = \"e\"\n");
    s.push_str(&format!("n_bins = {}\n", report.n_bins));
    s.push_str(&format!("n_discharged = {}\n", report.n_discharged));
    s.push_str(&format!("n_died = {}\n", report.n_died));
    s.push_str("\n[jsd]\n");
    s.push_str(&format!("sepsis1 = {}\n", fmt_f64(report.sepsis1)));
    s.push_str(&format!("qsofa = {}\n", fmt_f64(report.qsofa)));
    s.push_str(&format!("s3 = {}\n", fmt_f64(report.s3)));
    std::fs::write(path, s)?;
    Ok(())
}

/// One per-episode overlap row between decoded S3 segments and a criterion's
/// segments.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    pub episode_id: String,
    pub criterion: crate::criteria::Criterion,
    pub jaccard: f64,
    pub s3_covered_by_criterion: f64,
    pub criterion_covered_by_s3: f64,
}

pub fn write_overlaps(path: &Path, rows: &[OverlapRow]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{OVERLAP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.episode_id,
            r.criterion.as_str(),
            fmt_f64(r.jaccard),
            fmt_f64(r.s3_covered_by_criterion),
            fmt_f64(r.criterion_covered_by_s3),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_overlap_summary(path: &Path, rows: &[OverlapRow]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{OVERLAP_SUMMARY_HEADER}")?;
    for criterion in [crate::criteria::Criterion::Sepsis1, crate::criteria::Criterion::Qsofa] {
        let group: Vec<&OverlapRow> = rows.iter().filter(|r| r.criterion == criterion).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&OverlapRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
        writeln!(
            w,
            "{},{},{},{},{}",
            criterion.as_str(),
            group.len(),
            fmt_f64(mean(&|r| r.jaccard)),
            fmt_f64(mean(&|r| r.s3_covered_by_criterion)),
            fmt_f64(mean(&|r| r.criterion_covered_by_s3)),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_monotonicity(
    path: &Path,
    rates: &[(crate::criteria::Criterion, [Option<f64>; 3])],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MONOTONICITY_HEADER}")?;
    for (criterion, r) in rates {
        let cell = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            criterion.as_str(),
            cell(r[0]),
            cell(r[1]),
            cell(r[2]),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn trajectory_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let records = vec![TrajectoryRecord {
            episode_id: "e1".into(),
            interval: 0,
            vitals: VitalSigns::from_array([121.25, 63.5, 82.0, 18.75, 98.43]),
            state: TransientState::S2,
            state_probabilities: [0.125, 0.625, 0.25],
            sepsis1: false,
            qsofa: true,
            outcome: Outcome::Died,
            covariates: Covariates::from_array([0.013, -0.002, 0.04]),
        }];
        write_trajectories(&path, &records).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn flags_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flags.csv");
        let flags = CriteriaFlags {
            sirs_hr: true,
            sirs_rr: false,
            sirs_temp: true,
            sepsis1_met: true,
            qsofa_sbp: false,
            qsofa_rr: true,
            qsofa_met: false,
        };
        let per_episode = vec![
            ("a".to_string(), vec![flags, flags]),
            ("b".to_string(), vec![flags]),
        ];
        write_flags(&path, &per_episode).unwrap();
        assert_eq!(read_flags(&path).unwrap(), per_episode);
    }

    #[test]
    fn jsd_report_contains_three_named_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("jsd.toml");
        write_jsd_report(
            &path,
            &JsdReport {
                n_bins: 20,
                n_discharged: 10,
                n_died: 5,
                sepsis1: 0.15,
                qsofa: 0.09,
                s3: 0.2,
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: toml::Value = text.parse().unwrap();
        let jsd = parsed.get("jsd").unwrap();
        assert!(jsd.get("sepsis1").is_some());
        assert!(jsd.get("qsofa").is_some());
        assert!(jsd.get("s3").is_some());
        assert_eq!(parsed.get("log_base").unwrap().as_str(), Some("e"));
    }
}
