//! Episode and true-state CSV files.
//!
//! Episode columns, exactly:
//! `episode_id,interval_index,sbp,dbp,hr,rr,temp,age_z,laps2_z,cops2_z,outcome`.
//! Covariates and outcome repeat on every row and must be identical within an
//! episode; rows of one episode are contiguous with interval indices
//! `0, 1, 2, ...`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::model::{Covariates, Outcome, PatientEpisode, TransientState, VitalSigns};

use super::{fmt_f64, parse_f64, parse_usize, IoError};

const EPISODE_HEADER: &str =
    "episode_id,interval_index,sbp,dbp,hr,rr,temp,age_z,laps2_z,cops2_z,outcome";
const STATES_HEADER: &str = "episode_id,interval_index,state";

fn check_id(id: &str) -> Result<(), IoError> {
    if id.is_empty() || id.contains(',') || id.contains('\n') || id.contains('\r') {
        return Err(IoError::Validation(format!(
            "episode_id '{id}' is empty or contains a comma/newline"
        )));
    }
    Ok(())
}

pub fn write_episodes(path: &Path, cohort: &[PatientEpisode]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{EPISODE_HEADER}")?;
    for ep in cohort {
        check_id(&ep.episode_id)?;
        let c = ep.covariates.as_array();
        for (t, x) in ep.intervals.iter().enumerate() {
            let v = x.as_array();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                ep.episode_id,
                t,
                fmt_f64(v[0]),
                fmt_f64(v[1]),
                fmt_f64(v[2]),
                fmt_f64(v[3]),
                fmt_f64(v[4]),
                fmt_f64(c[0]),
                fmt_f64(c[1]),
                fmt_f64(c[2]),
                ep.outcome.as_str()
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes(path: &Path) -> Result<Vec<PatientEpisode>, IoError> {
    let pstr = path.display().to_string();
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(IoError::Parse {
                path: pstr,
                line: 1,
                msg: "empty file, expected header".into(),
            })
        }
    };
    if header.trim_end() != EPISODE_HEADER {
        return Err(IoError::Parse {
            path: pstr,
            line: 1,
            msg: format!("bad header, expected '{EPISODE_HEADER}'"),
        });
    }

    let mut cohort: Vec<PatientEpisode> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut current: Option<PatientEpisode> = None;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(IoError::Parse {
                path: pstr,
                line: line_no,
                msg: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        let t = parse_usize(fields[1], &pstr, line_no, "interval_index")?;
        let mut vit = [0.0; 5];
        for (d, f) in fields[2..7].iter().enumerate() {
            vit[d] = parse_f64(f, &pstr, line_no, "vital")?;
            if !vit[d].is_finite() {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("vital column {} is not finite", d + 2),
                });
            }
        }
        let mut cov = [0.0; 3];
        for (j, f) in fields[7..10].iter().enumerate() {
            cov[j] = parse_f64(f, &pstr, line_no, "covariate")?;
            if !cov[j].is_finite() {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: "covariate is not finite".into(),
                });
            }
        }
        let outcome = Outcome::parse(fields[10].trim()).ok_or_else(|| IoError::Parse {
            path: pstr.clone(),
            line: line_no,
            msg: format!("unknown outcome '{}'", fields[10]),
        })?;

        let starts_new = current.as_ref().map(|ep| ep.episode_id != id).unwrap_or(true);
        if starts_new {
            if let Some(done) = current.take() {
                cohort.push(done);
            }
            if !seen_ids.insert(id.clone()) {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("episode '{id}' rows are not contiguous"),
                });
            }
            if t != 0 {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("episode '{id}' must start at interval_index 0, found {t}"),
                });
            }
            current = Some(PatientEpisode {
                episode_id: id,
                covariates: Covariates::from_array(cov),
                intervals: vec![VitalSigns::from_array(vit)],
                outcome,
            });
        } else {
            let ep = current.as_mut().unwrap();
            if t != ep.intervals.len() {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!(
                        "non-contiguous interval_index for episode '{}': expected {}, found {t}",
                        ep.episode_id,
                        ep.intervals.len()
                    ),
                });
            }
            if ep.covariates.as_array() != cov {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("covariates changed within episode '{}'", ep.episode_id),
                });
            }
            if ep.outcome != outcome {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("outcome changed within episode '{}'", ep.episode_id),
                });
            }
            ep.intervals.push(VitalSigns::from_array(vit));
        }
    }
    if let Some(done) = current.take() {
        cohort.push(done);
    }
    if cohort.is_empty() {
        return Err(IoError::Validation(format!(
            "{pstr}: file contains no episodes"
        )));
    }
    Ok(cohort)
}

pub fn write_true_states(
    path: &Path,
    ids: &[String],
    states: &[Vec<TransientState>],
) -> Result<(), IoError> {
    if ids.len() != states.len() {
        return Err(IoError::Validation(
            "episode id and state path counts differ".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{STATES_HEADER}")?;
    for (id, zs) in ids.iter().zip(states) {
        check_id(id)?;
        for (t, z) in zs.iter().enumerate() {
            writeln!(w, "{id},{t},{}", z.as_str())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_true_states(path: &Path) -> Result<Vec<(String, Vec<TransientState>)>, IoError> {
    let pstr = path.display().to_string();
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != STATES_HEADER {
        return Err(IoError::Parse {
            path: pstr,
            line: 1,
            msg: format!("bad or missing header, expected '{STATES_HEADER}'"),
        });
    }
    let mut out: Vec<(String, Vec<TransientState>)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(IoError::Parse {
                path: pstr,
                line: line_no,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let t = parse_usize(fields[1], &pstr, line_no, "interval_index")?;
        let state = TransientState::parse(fields[2].trim()).ok_or_else(|| IoError::Parse {
            path: pstr.clone(),
            line: line_no,
            msg: format!("unknown state '{}'", fields[2]),
        })?;
        let matches_last = out.last().map(|(id, _)| id == fields[0]).unwrap_or(false);
        if matches_last {
            let (_, zs) = out.last_mut().unwrap();
            if t != zs.len() {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: format!("non-contiguous interval_index, expected {}", zs.len()),
                });
            }
            zs.push(state);
        } else {
            if t != 0 {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: "new episode must start at interval_index 0".into(),
                });
            }
            out.push((fields[0].to_string(), vec![state]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_ground_truth, simulate_cohort, CohortSpec};
    use tempfile::tempdir;

    #[test]
    fn episode_file_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cohort.csv");
        let spec = CohortSpec {
            n_patients: 25,
            ..CohortSpec::default()
        };
        let cohort: Vec<PatientEpisode> = simulate_cohort(&default_ground_truth(), &spec)
            .unwrap()
            .into_iter()
            .map(|s| s.episode)
            .collect();
        write_episodes(&path, &cohort).unwrap();
        let back = read_episodes(&path).unwrap();
        assert_eq!(cohort, back);
        // Writing the parsed cohort again reproduces the file byte for byte.
        let path2 = dir.path().join("cohort2.csv");
        write_episodes(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn minimal_single_row_file_parses() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.csv");
        std::fs::write(
            &path,
            "episode_id,interval_index,sbp,dbp,hr,rr,temp,age_z,laps2_z,cops2_z,outcome\n\
             a,0,120,60,80,18,98,0,0,0,Discharged\n",
        )
        .unwrap();
        let cohort = read_episodes(&path).unwrap();
        assert_eq!(cohort.len(), 1);
        assert_eq!(cohort[0].len(), 1);
    }

    #[test]
    fn interval_gap_reports_offending_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        std::fs::write(
            &path,
            "episode_id,interval_index,sbp,dbp,hr,rr,temp,age_z,laps2_z,cops2_z,outcome\n\
             a,0,120,60,80,18,98,0,0,0,Discharged\n\
             a,2,120,60,80,18,98,0,0,0,Discharged\n",
        )
        .unwrap();
        match read_episodes(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn inconsistent_covariates_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        std::fs::write(
            &path,
            "episode_id,interval_index,sbp,dbp,hr,rr,temp,age_z,laps2_z,cops2_z,outcome\n\
             a,0,120,60,80,18,98,0,0,0,Discharged\n\
             a,1,120,60,80,18,98,0.5,0,0,Discharged\n",
        )
        .unwrap();
        assert!(matches!(
            read_episodes(&path),
            Err(IoError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn true_states_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("states.csv");
        use TransientState::*;
        let ids = vec!["a".to_string(), "b".to_string()];
        let states = vec![vec![S1, S2, S1], vec![S3]];
        write_true_states(&path, &ids, &states).unwrap();
        let back = read_true_states(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, states[0]);
        assert_eq!(back[1].1, states[1]);
    }
}
