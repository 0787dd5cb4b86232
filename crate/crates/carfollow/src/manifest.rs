use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written once per output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    pub runtime_seconds: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(subcommand: &str, config: &C, seed: u64) -> Result<RunManifest> {
        Ok(RunManifest {
            subcommand: subcommand.into(),
            config: serde_json::to_value(config).map_err(|e| CliError::Internal(e.to_string()))?,
            seed,
            inputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            runtime_seconds: 0.0,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn finish(mut self, elapsed: Duration, dir: &Path) -> Result<()> {
        self.runtime_seconds = elapsed.as_secs_f64();
        crate::canonical::write_json(&dir.join(MANIFEST_FILE), &self)
    }
}
