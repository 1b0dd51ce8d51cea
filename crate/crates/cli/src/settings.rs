//! Config-file loading and the small parsers shared by the subcommands.
//!
//! Every subcommand follows the same scheme: an optional JSON config file
//! provides defaults (unknown keys are rejected), command-line flags
//! override individual fields, and the fully materialized result is echoed
//! into the run directory so the run is reproducible from its own output.

use std::path::Path;

use anyhow::{Context, Result};
use scrl_core::data::GenVariant;
use scrl_core::Error;
use serde::de::DeserializeOwned;

/// Load settings from an optional JSON file, falling back to defaults.
pub fn load<T: DeserializeOwned + Default>(config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let value: T = serde_json::from_str(&text)
        .with_context(|| format!("config {} is not valid", path.display()))?;
    Ok(value)
}

/// Replace `slot` when a flag supplied a value.
pub fn override_with<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn parse_variant(s: &str) -> Result<GenVariant> {
    match s {
        "inplace" => Ok(GenVariant::Inplace),
        "navigate" => Ok(GenVariant::Navigate),
        other => Err(Error::invalid_argument(format!(
            "unknown dataset variant '{other}'; expected 'inplace' or 'navigate'"
        ))
        .into()),
    }
}

pub fn parse_exec_mode(s: &str) -> Result<scrl_core::ExecMode> {
    match s {
        "sequential" => Ok(scrl_core::ExecMode::Sequential),
        "parallel" => Ok(scrl_core::ExecMode::Parallel),
        other => Err(Error::invalid_argument(format!(
            "unknown execution mode '{other}'; expected 'sequential' or 'parallel'"
        ))
        .into()),
    }
}

/// Parse a comma-separated list with a per-item parser.
pub fn parse_list<T>(s: &str, what: &str, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match item(part) {
            Some(v) => out.push(v),
            None => {
                return Err(Error::invalid_argument(format!(
                    "could not parse '{part}' in {what} list '{s}'"
                ))
                .into())
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid_argument(format!("empty {what} list '{s}'")).into());
    }
    Ok(out)
}

pub fn parse_u64_list(s: &str, what: &str) -> Result<Vec<u64>> {
    parse_list(s, what, |p| p.parse::<u64>().ok())
}

pub fn parse_u8_list(s: &str, what: &str) -> Result<Vec<u8>> {
    parse_list(s, what, |p| p.parse::<u8>().ok())
}

pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    parse_list(s, what, |p| p.parse::<f64>().ok())
}

/// Require a path-valued setting to have been supplied.
pub fn require_path<'a>(path: &'a Path, what: &str) -> Result<&'a Path> {
    if path.as_os_str().is_empty() {
        return Err(Error::invalid_argument(format!(
            "a {what} path is required (flag or config file)"
        ))
        .into());
    }
    Ok(path)
}
