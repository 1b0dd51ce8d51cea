//! Run-directory allocation and the materialized-config echo.

use std::path::{Path, PathBuf};

use anyhow::Result;
use scrl_core::Error;
use serde::Serialize;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "SCRL_OUT_ROOT";

/// Resolve the run directory for a command. An explicit `--out` directory
/// must be fresh (absent, or present but empty) — commands never overwrite
/// earlier output. Without `--out`, the first free `<root>/<command>-NNN`
/// under `$SCRL_OUT_ROOT` (default `runs`) is allocated.
pub fn resolve(explicit: Option<&Path>, command: &str) -> Result<PathBuf> {
    if let Some(dir) = explicit {
        if dir.exists() {
            let mut entries = std::fs::read_dir(dir)
                .map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
            if entries.next().is_some() {
                return Err(Error::invalid_argument(format!(
                    "output directory {} is not empty; every run gets a fresh directory",
                    dir.display()
                ))
                .into());
            }
        } else {
            std::fs::create_dir_all(dir)
                .map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        }
        return Ok(dir.to_path_buf());
    }
    let root = std::env::var_os(OUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    for i in 0..10_000u32 {
        let dir = root.join(format!("{command}-{i:03}"));
        if !dir.exists() {
            std::fs::create_dir_all(&dir)
                .map_err(|source| Error::Io { path: dir.clone(), source })?;
            return Ok(dir);
        }
    }
    Err(Error::invalid_argument(format!(
        "no free run directory under {} after 10000 attempts",
        root.display()
    ))
    .into())
}

/// Write the fully materialized settings as `config.json` in the run
/// directory, so outputs are self-describing and reproducible.
pub fn echo_config<T: Serialize>(dir: &Path, settings: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(settings)?;
    text.push('\n');
    let path = dir.join("config.json");
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    Ok(())
}

/// Write a text artifact into the run directory.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    Ok(())
}
