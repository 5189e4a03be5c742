//! Key-value run configuration: a TOML file of flat keys plus `--set key=value`
//! overrides, with unknown keys rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{config_error, CliResult};

/// Parses `key=value`; the value is read as a TOML value, falling back to a
/// bare string.
fn parse_override(s: &str) -> CliResult<(String, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_error(format!("override {s:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(config_error(format!("override {s:?} has an empty key")));
    }
    let value = match format!("v = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.trim().to_string()),
    };
    Ok((k.to_string(), value))
}

/// A resolved configuration with its canonical text and hash.
pub struct Resolved<T> {
    pub settings: T,
    pub text: String,
    pub hash: String,
}

pub fn resolve<T: DeserializeOwned + Serialize>(file: Option<&Path>, overrides: &[String]) -> CliResult<Resolved<T>> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| semsplat_core::Error::io(p, e))?;
            text.parse::<toml::Table>().map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        table.insert(k, v);
    }
    let settings: T = toml::Value::Table(table).try_into().map_err(|e| config_error(format!("{e}")))?;
    let text = toml::to_string(&settings).map_err(|e| config_error(format!("cannot serialize resolved config: {e}")))?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(Resolved { settings, text, hash })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct S {
        steps: usize,
        rate: f64,
        name: String,
        color: [f64; 3],
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "steps = 5\nrate = 0.5\n").unwrap();
        let sets = vec!["rate=0.25".to_string(), "name=push".to_string(), "color=[1, 0.5, 0]".to_string()];
        let r: Resolved<S> = resolve(Some(&p), &sets).unwrap();
        assert_eq!(r.settings, S { steps: 5, rate: 0.25, name: "push".into(), color: [1.0, 0.5, 0.0] });
        let again: Resolved<S> = resolve(None, &["steps=5".into(), "rate=0.25".into(), "name=\"push\"".into(), "color=[1.0,0.5,0.0]".into()]).unwrap();
        assert_eq!(again.hash, r.hash);
        assert!(resolve::<S>(None, &["stpes=3".into()]).is_err());
        assert!(resolve::<S>(None, &["steps".into()]).is_err());
    }
}
