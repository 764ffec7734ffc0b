//! Atomic output files and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use robustlr::SparseDataset;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let wrap = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(contents).map_err(wrap)?;
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub n_rows: usize,
    pub n_features: usize,
}

/// Reads a dataset and fingerprints the exact bytes it came from.
pub fn load_dataset(path: &Path) -> CliResult<(SparseDataset, InputDigest)> {
    let bytes = std::fs::read(path).map_err(|source| robustlr::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| robustlr::Error::Parse {
        line: 0,
        message: format!("{} is not UTF-8 text", path.display()),
    })?;
    let d = SparseDataset::parse(&text)?;
    let digest = InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
        n_rows: d.n_rows(),
        n_features: d.n_features(),
    };
    Ok((d, digest))
}

/// Everything needed to rerun a command and get the same bytes back.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub options: serde_json::Value,
    pub seed: u64,
    pub grids: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            tool: "robustlr",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            options: serde_json::Value::Null,
            seed,
            grids: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

pub fn manifest_path(explicit: Option<&PathBuf>, out: &Path) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}
