//! Line-oriented `key = value` text used by schema files, model config files
//! and the config blob embedded in checkpoints.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may not repeat.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Parses a value, naming the key and line on failure.
pub fn value<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| {
        Error::Config(format!(
            "line {}: cannot parse `{}` for key `{}`",
            e.line, e.value, e.key
        ))
    })
}
