//! Optional standardization sidecar: the per-covariate mean/sd used to
//! z-score raw covariates, kept next to a cohort file so raw values stay
//! recoverable.

use std::path::Path;

use toml::Value;

use crate::model::{Standardization, COVARIATE_NAMES};

use super::{fmt_f64, IoError};

const SCHEMA_VERSION: i64 = 1;

pub fn write_standardization(path: &Path, st: &Standardization) -> Result<(), IoError> {
    if st.sd.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        || st.mean.iter().any(|m| !m.is_finite())
    {
        return Err(IoError::Validation(
            "standardization needs finite means and positive sds".into(),
        ));
    }
    let mut s = String::new();
    s.push_str(&format!("schema_version = {SCHEMA_VERSION}\n"));
    s.push_str(&format!("# covariate order: {}\n", COVARIATE_NAMES.join(", ")));
    s.push_str(&format!(
        "mean = [{}]\n",
        st.mean.map(fmt_f64).join(", ")
    ));
    s.push_str(&format!("sd = [{}]\n", st.sd.map(fmt_f64).join(", ")));
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_standardization(path: &Path) -> Result<Standardization, IoError> {
    let text = std::fs::read_to_string(path)?;
    let err = |msg: String| IoError::Format {
        path: path.display().to_string(),
        msg,
    };
    let root: Value = text
        .parse()
        .map_err(|e| err(format!("not valid key-value text: {e}")))?;
    let table = root.as_table().ok_or_else(|| err("expected a table".into()))?;
    for key in table.keys() {
        if !["schema_version", "mean", "sd"].contains(&key.as_str()) {
            return Err(err(format!("unknown field {key}")));
        }
    }
    let version = table
        .get("schema_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| err("missing schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            path: path.display().to_string(),
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let take = |field: &str| -> Result<[f64; 3], IoError> {
        let arr = table
            .get(field)
            .and_then(|v| v.as_array())
            .ok_or_else(|| err(format!("missing {field}")))?;
        if arr.len() != 3 {
            return Err(err(format!("{field} must have 3 entries")));
        }
        let mut out = [0.0; 3];
        for (i, v) in arr.iter().enumerate() {
            out[i] = v
                .as_float()
                .or_else(|| v.as_integer().map(|x| x as f64))
                .ok_or_else(|| err(format!("{field}[{}] is not a number", COVARIATE_NAMES[i])))?;
        }
        Ok(out)
    };
    let st = Standardization {
        mean: take("mean")?,
        sd: take("sd")?,
    };
    if st.sd.iter().any(|s| !(*s > 0.0)) {
        return Err(IoError::Validation(format!(
            "{}: sds must be positive",
            path.display()
        )));
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn sidecar_round_trips_and_inverts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("standardization.toml");
        let st = Standardization {
            mean: [63.2, 110.5, 48.75],
            sd: [17.9, 38.25, 21.0],
        };
        write_standardization(&path, &st).unwrap();
        let back = read_standardization(&path).unwrap();
        assert_eq!(st, back);
        let raw = [81.0, 72.25, 69.75];
        assert_eq!(back.destandardize(&back.standardize(raw)), raw);
    }

    #[test]
    fn zero_sd_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("standardization.toml");
        std::fs::write(
            &path,
            "schema_version = 1\nmean = [0.0, 0.0, 0.0]\nsd = [1.0, 0.0, 1.0]\n",
        )
        .unwrap();
        assert!(matches!(
            read_standardization(&path),
            Err(IoError::Validation(_))
        ));
    }
}
