use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use frpt::container::{file_digest, sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// Record of one command invocation, written next to its primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the raw config file bytes, when the command takes one.
    pub config_digest: Option<String>,
    /// Input artifact path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output artifact path → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config_digest: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seeds: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn config(&mut self, bytes: &[u8]) {
        self.config_digest = Some(sha256_hex(bytes));
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    /// Writes `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> CliResult<PathBuf> {
        self.finished_unix = now();
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary.with_file_name(name);
        let json = serde_json::to_vec_pretty(&self).map_err(frpt::Error::from)?;
        write_atomic(&path, &json)?;
        Ok(path)
    }
}
