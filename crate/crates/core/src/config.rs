//! Plain-text `key = value` configuration files.
//!
//! One pair per line; blank lines and lines starting with `#` are skipped.
//! Keys use the long flag names of the command line (`window = 512` is the
//! same as `--window 512`).

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(format!("line {}", i + 1), "expected key = value"));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::parse(format!("line {}", i + 1), format!("invalid key {key:?}")));
        }
        pairs.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Command-line tokens for the pairs. `true` becomes a bare flag and
/// `false` drops the key; list values may be comma-separated.
pub fn to_flags(pairs: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => out.push(format!("--{k}")),
            "false" => {}
            _ => out.push(format!("--{k}={v}")),
        }
    }
    out
}

/// Renders pairs back to the file format.
pub fn render_config(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}
