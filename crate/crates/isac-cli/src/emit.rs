//! Deterministic result emission: one CSV per table plus a JSON manifest.
//!
//! The CSV bytes are a pure function of the experiment specification and
//! base seed: floats print with Rust's shortest round-trip formatting and
//! rows are ordered by construction. Timing is reported only in the
//! manifest, which is excluded from the byte-stability contract.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use isac_core::error::IsacError;

use crate::runner::ExperimentOutput;
use crate::spec::ExperimentSpec;

/// Run record written next to the data files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    /// SHA-256 of the canonical spec serialization.
    pub spec_sha256: String,
    pub base_seed: u64,
    pub artifact_version: String,
    pub files: Vec<String>,
    /// Wall-clock duration; informational only.
    pub wall_seconds: f64,
}

/// Hash of the canonical spec serialization.
pub fn spec_hash(spec: &ExperimentSpec) -> String {
    let mut hasher = Sha256::new();
    hasher.update(spec.canonical_json().as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Formats one CSV table deterministically.
pub fn format_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes every table of an experiment plus the manifest; returns the paths
/// written. Data files are byte-stable across re-runs of the same spec and
/// seed.
pub fn emit_results(
    spec: &ExperimentSpec,
    output: &ExperimentOutput,
    out_dir: &Path,
    wall_seconds: f64,
) -> Result<Vec<PathBuf>, IsacError> {
    if output.tables.is_empty() {
        return Err(IsacError::InvalidInput("no result tables to emit".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for table in &output.tables {
        let path = out_dir.join(format!("{}_{}.csv", spec.name, table.name));
        let header: Vec<&str> = table.header.iter().map(|s| s.as_str()).collect();
        fs::write(&path, format_csv(&header, &table.rows))?;
        files.push(path.file_name().unwrap().to_string_lossy().into_owned());
        written.push(path);
    }
    let manifest = Manifest {
        name: spec.name.clone(),
        spec_sha256: spec_hash(spec),
        base_seed: spec.base_seed,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        files,
        wall_seconds,
    };
    let mpath = out_dir.join(format!("{}_manifest.json", spec.name));
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)?;
    written.push(mpath);
    Ok(written)
}
