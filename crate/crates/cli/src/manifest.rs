//! Run manifests: written into the output directory before any heavy work
//! so every run is auditable and reproducible from the manifest alone.

use crate::{CliError, CliResult};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Fully resolved configuration (flags over config file over defaults).
    pub config: serde_json::Value,
    /// Absolute paths of all input files.
    pub inputs: Vec<String>,
    /// Absolute path of the output directory.
    pub output_dir: String,
}

/// Resolve an input path to absolute form, failing with exit code 3 when it
/// does not exist.
pub fn resolve_input(path: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Create the output directory and return its absolute path.
pub fn prepare_out_dir(out: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Input(format!("create {}: {e}", out.display())))?;
    std::fs::canonicalize(out)
        .map_err(|e| CliError::Input(format!("{}: {e}", out.display())))
}

pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    inputs: &[&Path],
) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
        inputs: inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        output_dir: out_dir.display().to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Input(format!("serialize manifest: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), json)
        .map_err(|e| CliError::Input(format!("write manifest: {e}")))
}
