//! Provenance block and deterministic writers shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: &'static str,
    pub path: PathBuf,
    pub sha256: String,
}

/// Embedded in every JSON artifact: the effective config, the seed and the
/// hashes of everything read.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputFile>,
}

impl Provenance {
    pub fn new(command: &'static str, config: &RunConfig) -> Self {
        Provenance {
            command,
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
        }
    }

    /// Reads `path`, records its hash, and returns the bytes.
    pub fn read(&mut self, role: &'static str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {role} file {}: {e}", path.display())))?;
        self.inputs.push(InputFile {
            role,
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write(path, text)
}
