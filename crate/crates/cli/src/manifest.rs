use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Record of one run: enough to replay it and to verify its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Resolved configuration (thread count excluded: it never changes
    /// results).
    pub config: Value,
    pub seed: u64,
    /// `flag`, `config` or `drawn`.
    pub seed_source: String,
    pub version: String,
    /// SHA-256 of every input file, keyed by role and file name.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == "manifest.json" || n.ends_with(".manifest.json"))
}

/// Regular files directly inside `dir`, sorted, manifests excluded.
pub fn dir_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && !is_manifest(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Files a run read or wrote, grouped under role names.
#[derive(Debug, Default)]
pub struct Artifacts {
    entries: Vec<(String, PathBuf)>,
}

impl Artifacts {
    pub fn file(&mut self, role: &str, path: &Path) {
        self.entries.push((role.to_string(), path.to_path_buf()));
    }

    /// Every file in `dir`, keyed `role/<file name>`.
    pub fn dir(&mut self, role: &str, dir: &Path) -> CliResult<()> {
        for f in dir_files(dir)? {
            let name = f.file_name().expect("file").to_string_lossy().into_owned();
            self.entries.push((format!("{role}/{name}"), f));
        }
        Ok(())
    }

    pub fn digests(&self) -> CliResult<BTreeMap<String, String>> {
        self.entries
            .iter()
            .map(|(k, p)| Ok((k.clone(), sha256_file(p)?)))
            .collect()
    }
}

pub fn write(manifest: &Manifest, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
