//! Model parameter files: a small TOML tree with explicit field names, a
//! schema version, and a fixed vital ordering. Unknown fields are rejected
//! and structural problems are reported with a path into the tree.

use std::fs;
use std::path::Path;

use toml::Value;

use crate::model::{
    validate_params, EmissionParams, ModelParams, TransientState, TransitionParams,
    VITAL_COLUMNS,
};

use super::{fmt_f64, IoError};

const SCHEMA_VERSION: i64 = 1;
const STATE_KEYS: [&str; 3] = ["s1", "s2", "s3"];

pub fn write_params(path: &Path, mp: &ModelParams) -> Result<(), IoError> {
    let violations = validate_params(mp);
    if !violations.is_empty() {
        return Err(IoError::Validation(format!(
            "refusing to write invalid parameters: {}",
            violations[0]
        )));
    }
    let fmt_vec = |v: &[f64]| {
        v.iter()
            .map(|x| fmt_f64(*x))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut s = String::new();
    s.push_str(&format!("schema_version = {SCHEMA_VERSION}\n\n"));
    s.push_str(&format!(
        "# vital order: {}\n\n[transition]\n",
        VITAL_COLUMNS.join(", ")
    ));
    s.push_str(&format!("beta = [{}]\n", fmt_vec(&mp.transition.beta)));
    s.push_str(&format!("lambda = [{}]\n", fmt_vec(&mp.transition.lambda)));
    s.push_str(&format!("gamma = [{}]\n", fmt_vec(&mp.transition.gamma)));
    for (k, key) in STATE_KEYS.iter().enumerate() {
        s.push_str(&format!("\n[emission.{key}]\n"));
        s.push_str(&format!("mu = [{}]\n", fmt_vec(&mp.emission.mu[k])));
        s.push_str(&format!("sigma = [{}]\n", fmt_vec(&mp.emission.sigma[k])));
    }
    fs::write(path, s)?;
    Ok(())
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn take_array3(
    v: &Value,
    file: &Path,
    field: &str,
    idx_names: [&str; 3],
) -> Result<[f64; 3], IoError> {
    let arr = v
        .as_array()
        .ok_or_else(|| format_err(file, format!("{field} must be an array of 3 numbers")))?;
    if arr.len() != 3 {
        return Err(format_err(
            file,
            format!("{field} must have 3 entries, found {}", arr.len()),
        ));
    }
    let mut out = [0.0; 3];
    for (i, x) in arr.iter().enumerate() {
        out[i] = as_f64(x).ok_or_else(|| {
            format_err(file, format!("{field}[{}] is not a number", idx_names[i]))
        })?;
    }
    Ok(out)
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn take_row5(v: &Value, file: &Path, field: &str) -> Result<[f64; 5], IoError> {
    let arr = v
        .as_array()
        .ok_or_else(|| format_err(file, format!("{field} must be an array of 5 numbers")))?;
    if arr.len() != 5 {
        return Err(format_err(
            file,
            format!("{field} must have 5 entries (vital order {:?})", VITAL_COLUMNS),
        ));
    }
    let mut out = [0.0; 5];
    for (i, x) in arr.iter().enumerate() {
        out[i] = as_f64(x).ok_or_else(|| {
            format_err(file, format!("{field}[{}] is not a number", VITAL_COLUMNS[i]))
        })?;
    }
    Ok(out)
}

fn reject_unknown(table: &toml::value::Table, allowed: &[&str], file: &Path, at: &str) -> Result<(), IoError> {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(format_err(file, format!("unknown field {at}{key}")));
        }
    }
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ModelParams, IoError> {
    let text = fs::read_to_string(path)?;
    let root: Value = text.parse().map_err(|e| IoError::Format {
        path: path.display().to_string(),
        msg: format!("not valid key-value text: {e}"),
    })?;
    let table = root
        .as_table()
        .ok_or_else(|| format_err(path, "top level must be a table"))?;
    reject_unknown(table, &["schema_version", "transition", "emission"], path, "")?;

    let version = table
        .get("schema_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| format_err(path, "missing schema_version"))?;
    if version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            path: path.display().to_string(),
            found: version,
            expected: SCHEMA_VERSION,
        });
    }

    let transition = table
        .get("transition")
        .and_then(|v| v.as_table())
        .ok_or_else(|| format_err(path, "missing [transition]"))?;
    reject_unknown(transition, &["beta", "lambda", "gamma"], path, "transition.")?;
    let state_names = ["S1", "S2", "S3"];
    let beta = take_array3(
        transition
            .get("beta")
            .ok_or_else(|| format_err(path, "missing transition.beta"))?,
        path,
        "transition.beta",
        ["age", "laps2", "cops2"],
    )?;
    let lambda = take_array3(
        transition
            .get("lambda")
            .ok_or_else(|| format_err(path, "missing transition.lambda"))?,
        path,
        "transition.lambda",
        state_names,
    )?;
    let gamma = take_array3(
        transition
            .get("gamma")
            .ok_or_else(|| format_err(path, "missing transition.gamma"))?,
        path,
        "transition.gamma",
        state_names,
    )?;

    let emission = table
        .get("emission")
        .and_then(|v| v.as_table())
        .ok_or_else(|| format_err(path, "missing [emission]"))?;
    reject_unknown(emission, &STATE_KEYS, path, "emission.")?;
    let mut mu = [[0.0; 5]; 3];
    let mut sigma = [[0.0; 5]; 3];
    for (k, key) in STATE_KEYS.iter().enumerate() {
        let state = TransientState::ALL[k].as_str();
        let sub = emission
            .get(*key)
            .and_then(|v| v.as_table())
            .ok_or_else(|| format_err(path, format!("missing emission.{key} ([{state}] block)")))?;
        reject_unknown(sub, &["mu", "sigma"], path, &format!("emission.{key}."))?;
        mu[k] = take_row5(
            sub.get("mu")
                .ok_or_else(|| format_err(path, format!("missing emission.mu[{state}]")))?,
            path,
            &format!("emission.mu[{state}]"),
        )?;
        sigma[k] = take_row5(
            sub.get("sigma")
                .ok_or_else(|| format_err(path, format!("missing emission.sigma[{state}]")))?,
            path,
            &format!("emission.sigma[{state}]"),
        )?;
    }

    let mp = ModelParams {
        transition: TransitionParams { beta, lambda, gamma },
        emission: EmissionParams { mu, sigma },
    };
    let violations = validate_params(&mp);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(IoError::Validation(format!(
            "{}: {}",
            path.display(),
            list.join("; ")
        )));
    }
    Ok(mp)
}
