//! `--set key=value` overrides on a JSON document.

use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Splits `a.b.c=value`; the value is read as JSON when it parses, else as a
/// plain string.
pub fn parse_override(raw: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override '{raw}' is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::usage(format!("override '{raw}' has an empty key segment")));
    }
    let value = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((path, value))
}

/// Replaces the value at `path`; every segment must already exist.
pub fn apply_override(doc: &mut Value, path: &[String], value: Value) -> CliResult<()> {
    let mut node = doc;
    for (depth, seg) in path.iter().enumerate() {
        let here = path[..=depth].join(".");
        node = match node {
            Value::Object(map) => map
                .get_mut(seg)
                .ok_or_else(|| CliError::config(format!("unknown override key '{here}'")))?,
            _ => return Err(CliError::config(format!("override key '{here}' does not name a field"))),
        };
    }
    *node = value;
    Ok(())
}

pub fn apply_all(doc: &mut Value, raw: &[String]) -> CliResult<()> {
    for r in raw {
        let (path, value) = parse_override(r)?;
        apply_override(doc, &path, value)?;
    }
    Ok(())
}
