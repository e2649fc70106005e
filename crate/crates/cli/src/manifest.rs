use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::write_json;

pub const MANIFEST: &str = "manifest.json";

/// Provenance record written next to every command's outputs.
///
/// It contains nothing that varies between identical runs: no timestamps,
/// no worker count and no checksums of timing files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// File name to lowercase hex sha256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig, seeds: BTreeMap<String, u64>, files: &[&str]) -> Result<()> {
    let mut checksums = BTreeMap::new();
    for name in files {
        checksums.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let mut config = config.clone();
    config.workers = None;
    config.out = None;
    let manifest = Manifest {
        tool: "afm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config,
        seeds,
        files: checksums,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}
