//! Run manifests written next to every CLI output.
//!
//! A manifest records what produced a file: the subcommand, the fully
//! resolved configuration, SHA-256 digests of every input and of the output
//! itself. Two runs agree exactly when their `output_sha256` fields agree;
//! `timestamp` is the only field allowed to differ.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub output: String,
    pub output_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_owned(),
            config,
            inputs: Vec::new(),
            tool_version: TOOL_VERSION.to_owned(),
            seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            output: String::new(),
            output_sha256: String::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    /// `<out>.manifest.json`.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Writes `bytes` to `out` and the manifest beside it.
    pub fn write_with_output(mut self, out: &Path, bytes: &[u8]) -> Result<Self> {
        std::fs::write(out, bytes)?;
        self.output = out.display().to_string();
        self.output_sha256 = sha256_hex(bytes);
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(Self::path_for(out), json + "\n")?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| crate::Error::Schema(e.to_string()))
    }
}
