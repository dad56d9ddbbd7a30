//! Layered settings: command-line flags over a JSON config file over
//! built-in defaults.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// Bad invocation: reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Config-file values visible to one subcommand.
///
/// A file may hold flat keys shared by every subcommand and sections named
/// after a subcommand; section keys win over flat ones.
#[derive(Debug, Default)]
pub struct Layer {
    values: Map<String, Value>,
}

pub const SECTIONS: [&str; 4] = ["synth", "corrupt", "denoise", "metrics"];

impl Layer {
    pub fn load(path: Option<&Path>, command: &str, allowed: &[&str]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let root: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let Value::Object(root) = root else {
            return Err(usage(format!("config {} must hold a JSON object", path.display())));
        };
        let mut values = Map::new();
        let mut section = None;
        for (k, v) in root {
            if k == command {
                match v {
                    Value::Object(m) => section = Some(m),
                    _ => return Err(usage(format!("config section '{k}' must be an object"))),
                }
            } else if !SECTIONS.contains(&k.as_str()) {
                values.insert(k, v);
            }
        }
        values.extend(section.unwrap_or_default());
        for k in values.keys() {
            if k != "threads" && !allowed.contains(&k.as_str()) {
                return Err(usage(format!("unknown config key '{k}' for '{command}'")));
            }
        }
        Ok(Self { values })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| usage(format!("config key '{key}': {e}"))),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    /// Flag if given, else config, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Flag if given, else config; `None` when neither is set.
    pub fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

/// Parses `a,b,c` into numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .map(|t| t.parse::<T>().map_err(|_| usage(format!("bad {what} value '{t}'"))))
        .collect()
}

/// A list setting that a config file may give as a number, an array or a
/// comma string.
pub fn list_from_value(v: &Value, what: &str) -> Result<Vec<f64>> {
    match v {
        Value::Number(n) => Ok(vec![n.as_f64().unwrap_or(f64::NAN)]),
        Value::String(s) => parse_list(s, what),
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| usage(format!("{what} entries must be numbers"))))
            .collect(),
        _ => Err(usage(format!("config key '{what}' must be a number, list or string"))),
    }
}
