//! Posterior chain files (one retained sample per line, header with the
//! config echo, append-safe) and full sampler checkpoints.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::inference::{
    AcceptanceRates, Checkpoint, MuPrior, PosteriorChain, PosteriorSample, SamplerConfig,
};
use crate::model::{
    EmissionParams, ModelParams, TransientState, TransitionParams, VITAL_COLUMNS,
};

use super::{fmt_f64, parse_f64, parse_usize, IoError};

const POSTERIOR_MAGIC: &str = "# sepsis-hmm-posterior v1";
const CHECKPOINT_MAGIC: &str = "# sepsis-hmm-checkpoint v1";
pub(crate) const PARAM_FIELDS: usize = 39;

/// Optional extras for the posterior header.
#[derive(Debug, Clone, Default)]
pub struct PosteriorFileOptions {
    /// Emitted as a `# generated_at=...` comment when set; omit for
    /// byte-reproducible outputs.
    pub timestamp: Option<String>,
}

pub(crate) fn params_to_fields(p: &ModelParams) -> [f64; PARAM_FIELDS] {
    let mut out = [0.0; PARAM_FIELDS];
    let mut i = 0;
    for j in 0..3 {
        out[i] = p.transition.beta[j];
        i += 1;
    }
    for k in 0..3 {
        out[i] = p.transition.lambda[k];
        i += 1;
    }
    for k in 0..3 {
        out[i] = p.transition.gamma[k];
        i += 1;
    }
    for k in 0..3 {
        for d in 0..5 {
            out[i] = p.emission.mu[k][d];
            i += 1;
        }
    }
    for k in 0..3 {
        for d in 0..5 {
            out[i] = p.emission.sigma[k][d];
            i += 1;
        }
    }
    out
}

pub(crate) fn fields_to_params(f: &[f64; PARAM_FIELDS]) -> ModelParams {
    let mut p = ModelParams {
        transition: TransitionParams {
            beta: [0.0; 3],
            lambda: [0.0; 3],
            gamma: [0.0; 3],
        },
        emission: EmissionParams {
            mu: [[0.0; 5]; 3],
            sigma: [[0.0; 5]; 3],
        },
    };
    let mut i = 0;
    for j in 0..3 {
        p.transition.beta[j] = f[i];
        i += 1;
    }
    for k in 0..3 {
        p.transition.lambda[k] = f[i];
        i += 1;
    }
    for k in 0..3 {
        p.transition.gamma[k] = f[i];
        i += 1;
    }
    for k in 0..3 {
        for d in 0..5 {
            p.emission.mu[k][d] = f[i];
            i += 1;
        }
    }
    for k in 0..3 {
        for d in 0..5 {
            p.emission.sigma[k][d] = f[i];
            i += 1;
        }
    }
    p
}

fn column_header() -> String {
    let mut cols = vec!["sweep".to_string()];
    for name in ["age", "laps2", "cops2"] {
        cols.push(format!("beta_{name}"));
    }
    for group in ["lambda", "gamma"] {
        for s in TransientState::ALL {
            cols.push(format!("{group}_{}", s.as_str()));
        }
    }
    for group in ["mu", "sigma"] {
        for s in TransientState::ALL {
            for v in VITAL_COLUMNS {
                cols.push(format!("{group}_{}_{v}", s.as_str()));
            }
        }
    }
    cols.join(",")
}

fn config_echo(cfg: &SamplerConfig) -> String {
    let mu_prior = match &cfg.mu_prior {
        None => "mu_prior=auto".to_string(),
        Some(p) => format!(
            "mu_prior_mean={} mu_prior_sd={}",
            p.mean.map(fmt_f64).join(";"),
            p.sd.map(fmt_f64).join(";")
        ),
    };
    format!(
        "# config seed={} n_sweeps={} n_keep={} beta_log_step={} lambda_logit_step={} \
         adapt_burnin={} use_outcomes={} sigma_prior_shape={} sigma_prior_scale={} \
         store_final_latents={} {}",
        cfg.seed,
        cfg.n_sweeps,
        cfg.n_keep,
        fmt_f64(cfg.beta_log_step),
        fmt_f64(cfg.lambda_logit_step),
        cfg.adapt_burnin,
        cfg.use_outcomes,
        fmt_f64(cfg.sigma_prior_shape),
        fmt_f64(cfg.sigma_prior_scale),
        cfg.store_final_latents,
        mu_prior
    )
}

fn parse_config_echo(line: &str, path: &str, line_no: usize) -> Result<SamplerConfig, IoError> {
    let mut cfg = SamplerConfig::default();
    let mut mu_mean: Option<[f64; 5]> = None;
    let mut mu_sd: Option<[f64; 5]> = None;
    let body = line.trim_start_matches('#').trim();
    let body = body.strip_prefix("config").unwrap_or(body).trim();
    for token in body.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| IoError::Parse {
            path: path.to_string(),
            line: line_no,
            msg: format!("malformed config token '{token}'"),
        })?;
        let bad = |msg: String| IoError::Parse {
            path: path.to_string(),
            line: line_no,
            msg,
        };
        match key {
            "seed" => cfg.seed = value.parse().map_err(|_| bad(format!("bad seed '{value}'")))?,
            "n_sweeps" => cfg.n_sweeps = parse_usize(value, path, line_no, "n_sweeps")?,
            "n_keep" => cfg.n_keep = parse_usize(value, path, line_no, "n_keep")?,
            "beta_log_step" => cfg.beta_log_step = parse_f64(value, path, line_no, key)?,
            "lambda_logit_step" => cfg.lambda_logit_step = parse_f64(value, path, line_no, key)?,
            "adapt_burnin" => cfg.adapt_burnin = parse_usize(value, path, line_no, key)?,
            "use_outcomes" => {
                cfg.use_outcomes = value
                    .parse()
                    .map_err(|_| bad(format!("bad use_outcomes '{value}'")))?
            }
            "sigma_prior_shape" => cfg.sigma_prior_shape = parse_f64(value, path, line_no, key)?,
            "sigma_prior_scale" => cfg.sigma_prior_scale = parse_f64(value, path, line_no, key)?,
            "store_final_latents" => {
                cfg.store_final_latents = value
                    .parse()
                    .map_err(|_| bad(format!("bad store_final_latents '{value}'")))?
            }
            "mu_prior" => {
                if value != "auto" {
                    return Err(bad(format!("unknown mu_prior '{value}'")));
                }
            }
            "mu_prior_mean" | "mu_prior_sd" => {
                let parts: Vec<&str> = value.split(';').collect();
                if parts.len() != 5 {
                    return Err(bad(format!("{key} must have 5 entries")));
                }
                let mut arr = [0.0; 5];
                for (i, p) in parts.iter().enumerate() {
                    arr[i] = parse_f64(p, path, line_no, key)?;
                }
                if key == "mu_prior_mean" {
                    mu_mean = Some(arr);
                } else {
                    mu_sd = Some(arr);
                }
            }
            other => return Err(bad(format!("unknown config key '{other}'"))),
        }
    }
    if let (Some(mean), Some(sd)) = (mu_mean, mu_sd) {
        cfg.mu_prior = Some(MuPrior { mean, sd });
    }
    Ok(cfg)
}

fn write_sample_line(w: &mut impl Write, s: &PosteriorSample) -> std::io::Result<()> {
    let fields = params_to_fields(&s.params);
    let mut line = String::with_capacity(64 + 20 * PARAM_FIELDS);
    line.push_str(&s.sweep.to_string());
    for f in fields {
        line.push(',');
        line.push_str(&fmt_f64(f));
    }
    writeln!(w, "{line}")
}

fn parse_sample_line(
    line: &str,
    path: &str,
    line_no: usize,
) -> Result<PosteriorSample, IoError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != PARAM_FIELDS + 1 {
        return Err(IoError::Parse {
            path: path.to_string(),
            line: line_no,
            msg: format!(
                "truncated or malformed sample line: expected {} fields, found {}",
                PARAM_FIELDS + 1,
                fields.len()
            ),
        });
    }
    let sweep = parse_usize(fields[0], path, line_no, "sweep")?;
    let mut vals = [0.0; PARAM_FIELDS];
    for (i, f) in fields[1..].iter().enumerate() {
        vals[i] = parse_f64(f, path, line_no, "parameter")?;
    }
    Ok(PosteriorSample {
        sweep,
        params: fields_to_params(&vals),
    })
}

pub fn write_posterior(
    path: &Path,
    chain: &PosteriorChain,
    opts: &PosteriorFileOptions,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{POSTERIOR_MAGIC}")?;
    writeln!(w, "{}", config_echo(&chain.config))?;
    if let Some(ts) = &opts.timestamp {
        writeln!(w, "# generated_at={ts}")?;
    }
    writeln!(w, "{}", column_header())?;
    for s in &chain.samples {
        write_sample_line(&mut w, s)?;
    }
    let a = &chain.acceptance;
    writeln!(
        w,
        "# acceptance beta_proposed={} beta_accepted={} lambda_proposed={} lambda_accepted={}",
        a.beta_proposed, a.beta_accepted, a.lambda_proposed, a.lambda_accepted
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_posterior(path: &Path) -> Result<PosteriorChain, IoError> {
    let pstr = path.display().to_string();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut config: Option<SamplerConfig> = None;
    let mut acceptance = AcceptanceRates::default();
    let mut samples = Vec::new();
    let mut saw_magic = false;
    let mut saw_columns = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if line_no == 1 {
                if trimmed != POSTERIOR_MAGIC {
                    return Err(IoError::Parse {
                        path: pstr,
                        line: 1,
                        msg: format!("not a posterior file (expected '{POSTERIOR_MAGIC}')"),
                    });
                }
                saw_magic = true;
            } else if trimmed.starts_with("# config") {
                config = Some(parse_config_echo(trimmed, &pstr, line_no)?);
            } else if trimmed.starts_with("# acceptance") {
                for token in trimmed.trim_start_matches("# acceptance").split_whitespace() {
                    if let Some((k, v)) = token.split_once('=') {
                        let n: u64 = v.parse().map_err(|_| IoError::Parse {
                            path: pstr.clone(),
                            line: line_no,
                            msg: format!("bad acceptance counter '{token}'"),
                        })?;
                        match k {
                            "beta_proposed" => acceptance.beta_proposed = n,
                            "beta_accepted" => acceptance.beta_accepted = n,
                            "lambda_proposed" => acceptance.lambda_proposed = n,
                            "lambda_accepted" => acceptance.lambda_accepted = n,
                            _ => {}
                        }
                    }
                }
            }
            continue;
        }
        if !saw_magic {
            return Err(IoError::Parse {
                path: pstr,
                line: line_no,
                msg: format!("missing '{POSTERIOR_MAGIC}' header"),
            });
        }
        if !saw_columns {
            if trimmed != column_header() {
                return Err(IoError::Parse {
                    path: pstr,
                    line: line_no,
                    msg: "column header does not match this schema".into(),
                });
            }
            saw_columns = true;
            continue;
        }
        samples.push(parse_sample_line(trimmed, &pstr, line_no)?);
    }
    let config = config.ok_or_else(|| IoError::Parse {
        path: pstr.clone(),
        line: 1,
        msg: "missing '# config' line".into(),
    })?;
    if samples.is_empty() {
        return Err(IoError::Validation(format!(
            "{pstr}: posterior file has no samples"
        )));
    }
    Ok(PosteriorChain {
        samples,
        acceptance,
        config,
        warnings: Vec::new(),
        final_latents: None,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "{}", config_echo(&ck.config))?;
    writeln!(w, "sweep={}", ck.sweep)?;
    writeln!(
        w,
        "kernel_calls={}",
        ck.kernel_calls
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(w, "beta_step={}", fmt_f64(ck.beta_step))?;
    writeln!(w, "lambda_step={}", fmt_f64(ck.lambda_step))?;
    writeln!(
        w,
        "acceptance={},{},{},{}",
        ck.acceptance.beta_proposed,
        ck.acceptance.beta_accepted,
        ck.acceptance.lambda_proposed,
        ck.acceptance.lambda_accepted
    )?;
    writeln!(w, "n_patients={}", ck.n_patients)?;
    writeln!(w, "total_intervals={}", ck.total_intervals)?;
    let fields = params_to_fields(&ck.params);
    writeln!(
        w,
        "params={}",
        fields.iter().map(|f| fmt_f64(*f)).collect::<Vec<_>>().join(",")
    )?;
    for z in &ck.latents {
        let digits: String = z.iter().map(|k| char::from(b'0' + k)).collect();
        writeln!(w, "z={digits}")?;
    }
    writeln!(w, "kept={}", ck.kept.len())?;
    for s in &ck.kept {
        write_sample_line(&mut w, s)?;
    }
    w.flush()?;
    Ok(())
}

struct LineCursor {
    lines: Vec<String>,
    pos: usize,
    path: String,
}

impl LineCursor {
    fn next(&mut self, what: &str) -> Result<(usize, &str), IoError> {
        if self.pos >= self.lines.len() {
            return Err(IoError::Parse {
                path: self.path.clone(),
                line: self.lines.len(),
                msg: format!("unexpected end of checkpoint, wanted {what}"),
            });
        }
        self.pos += 1;
        Ok((self.pos, self.lines[self.pos - 1].trim_end()))
    }

    fn take_kv(&mut self, name: &str) -> Result<(usize, String), IoError> {
        let (ln, line) = self.next(name)?;
        match line.split_once('=') {
            Some((k, v)) if k == name => Ok((ln, v.to_string())),
            _ => Err(IoError::Parse {
                path: self.path.clone(),
                line: ln,
                msg: format!("expected '{name}=...'"),
            }),
        }
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let pstr = path.display().to_string();
    let file = File::open(path)?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()?;
    let mut cur = LineCursor {
        lines,
        pos: 0,
        path: pstr.clone(),
    };

    let (l1, magic) = cur.next("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(IoError::Parse {
            path: pstr,
            line: l1,
            msg: format!("not a checkpoint file (expected '{CHECKPOINT_MAGIC}')"),
        });
    }
    let (cl, config_line) = cur.next("config")?;
    let config_line = config_line.to_string();
    let config = parse_config_echo(&config_line, &pstr, cl)?;

    let (ln, v) = cur.take_kv("sweep")?;
    let sweep = parse_usize(&v, &pstr, ln, "sweep")?;
    let (ln, v) = cur.take_kv("kernel_calls")?;
    let calls: Vec<&str> = v.split(',').collect();
    if calls.len() != 7 {
        return Err(IoError::Parse {
            path: pstr,
            line: ln,
            msg: "kernel_calls must have 7 entries".into(),
        });
    }
    let mut kernel_calls = [0u64; 7];
    for (i, c) in calls.iter().enumerate() {
        kernel_calls[i] = c.parse().map_err(|_| IoError::Parse {
            path: pstr.clone(),
            line: ln,
            msg: format!("bad kernel call counter '{c}'"),
        })?;
    }
    let (ln, v) = cur.take_kv("beta_step")?;
    let beta_step = parse_f64(&v, &pstr, ln, "beta_step")?;
    let (ln, v) = cur.take_kv("lambda_step")?;
    let lambda_step = parse_f64(&v, &pstr, ln, "lambda_step")?;
    let (ln, v) = cur.take_kv("acceptance")?;
    let acc: Vec<&str> = v.split(',').collect();
    if acc.len() != 4 {
        return Err(IoError::Parse {
            path: pstr,
            line: ln,
            msg: "acceptance must have 4 counters".into(),
        });
    }
    let parse_u64 = |s: &str, ln: usize| -> Result<u64, IoError> {
        s.parse().map_err(|_| IoError::Parse {
            path: pstr.clone(),
            line: ln,
            msg: format!("bad counter '{s}'"),
        })
    };
    let acceptance = AcceptanceRates {
        beta_proposed: parse_u64(acc[0], ln)?,
        beta_accepted: parse_u64(acc[1], ln)?,
        lambda_proposed: parse_u64(acc[2], ln)?,
        lambda_accepted: parse_u64(acc[3], ln)?,
    };
    let (ln, v) = cur.take_kv("n_patients")?;
    let n_patients = parse_usize(&v, &pstr, ln, "n_patients")?;
    let (ln, v) = cur.take_kv("total_intervals")?;
    let total_intervals = parse_usize(&v, &pstr, ln, "total_intervals")?;
    let (ln, v) = cur.take_kv("params")?;
    let fields: Vec<&str> = v.split(',').collect();
    if fields.len() != PARAM_FIELDS {
        return Err(IoError::Parse {
            path: pstr,
            line: ln,
            msg: format!("params must have {PARAM_FIELDS} fields"),
        });
    }
    let mut vals = [0.0; PARAM_FIELDS];
    for (i, f) in fields.iter().enumerate() {
        vals[i] = parse_f64(f, &pstr, ln, "params")?;
    }
    let params = fields_to_params(&vals);

    let mut latents = Vec::with_capacity(n_patients);
    for _ in 0..n_patients {
        let (ln, line) = cur.next("latent path")?;
        let digits = line.strip_prefix("z=").ok_or_else(|| IoError::Parse {
            path: pstr.clone(),
            line: ln,
            msg: "expected 'z=...' latent path".into(),
        })?;
        let mut z = Vec::with_capacity(digits.len());
        for ch in digits.chars() {
            match ch {
                '0' | '1' | '2' => z.push(ch as u8 - b'0'),
                _ => {
                    return Err(IoError::Parse {
                        path: pstr,
                        line: ln,
                        msg: format!("bad latent state digit '{ch}'"),
                    })
                }
            }
        }
        latents.push(z);
    }
    let (ln, v) = cur.take_kv("kept")?;
    let n_kept = parse_usize(&v, &pstr, ln, "kept")?;
    let mut kept = Vec::with_capacity(n_kept);
    for _ in 0..n_kept {
        let (ln, line) = cur.next("kept sample")?;
        kept.push(parse_sample_line(line, &pstr, ln)?);
    }
    Ok(Checkpoint {
        config,
        sweep,
        kernel_calls,
        beta_step,
        lambda_step,
        acceptance,
        params,
        latents,
        kept,
        n_patients,
        total_intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{map_params, run_sampler, Sampler};
    use crate::model::{Covariates, Outcome, PatientEpisode, VitalSigns};
    use tempfile::tempdir;

    fn cohort() -> Vec<PatientEpisode> {
        (0..4)
            .map(|i| PatientEpisode {
                episode_id: format!("p{i}"),
                covariates: Covariates::from_array([0.01, -0.01, 0.02]),
                intervals: (0..6)
                    .map(|t| {
                        VitalSigns::from_array([
                            118.0 + t as f64 + i as f64,
                            64.0,
                            78.0 + t as f64,
                            18.5,
                            98.1,
                        ])
                    })
                    .collect(),
                outcome: Outcome::Censored,
            })
            .collect()
    }

    fn small_chain(seed: u64) -> PosteriorChain {
        let cfg = SamplerConfig {
            n_sweeps: 60,
            n_keep: 20,
            adapt_burnin: 10,
            seed,
            ..SamplerConfig::default()
        };
        run_sampler(&cohort(), &cfg).unwrap()
    }

    #[test]
    fn posterior_round_trip_preserves_samples_and_map() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("post.csv");
        let chain = small_chain(3);
        write_posterior(&path, &chain, &PosteriorFileOptions::default()).unwrap();
        let back = read_posterior(&path).unwrap();
        assert_eq!(chain.samples, back.samples);
        assert_eq!(chain.config, back.config);
        assert_eq!(chain.acceptance, back.acceptance);
        assert_eq!(map_params(&chain).unwrap(), map_params(&back).unwrap());
    }

    #[test]
    fn single_sample_chain_has_header_and_one_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("post.csv");
        let mut chain = small_chain(4);
        chain.samples.truncate(1);
        write_posterior(&path, &chain, &PosteriorFileOptions::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data_lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("sweep"))
            .collect();
        assert_eq!(data_lines.len(), 1);
    }

    #[test]
    fn truncated_sample_line_reports_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("post.csv");
        let chain = small_chain(5);
        write_posterior(&path, &chain, &PosteriorFileOptions::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // Cut the first data row (line 4: magic, config, columns, data...).
        let cut = lines[3].rsplit_once(',').unwrap().0.to_string();
        lines[3] = cut;
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_posterior(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn checkpoint_file_round_trips_state() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let cfg = SamplerConfig {
            n_sweeps: 30,
            n_keep: 12,
            adapt_burnin: 6,
            seed: 8,
            ..SamplerConfig::default()
        };
        let cohort = cohort();
        let mut s = Sampler::new(&cohort, &cfg).unwrap();
        s.run_to(21).unwrap();
        let ck = s.checkpoint();
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(ck, back);
        // Resume from file equals resume in memory equals straight run.
        let mut resumed = Sampler::from_checkpoint(back, &cohort).unwrap();
        resumed.run_to(cfg.n_sweeps).unwrap();
        let from_file = resumed.finish().unwrap();
        let straight = run_sampler(&cohort, &cfg).unwrap();
        assert_eq!(from_file, straight);
    }
}
