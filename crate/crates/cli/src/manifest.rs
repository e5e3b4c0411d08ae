use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Deliberately free of timestamps
/// and absolute paths so that identical runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

/// Writes `manifest.json` into `dir`, listing `outputs` relative to `dir`.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    outputs: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let mut entries = Vec::with_capacity(outputs.len());
    let mut sorted: Vec<&PathBuf> = outputs.iter().collect();
    sorted.sort();
    for p in sorted {
        let rel = p.strip_prefix(dir).unwrap_or(p);
        entries.push(OutputEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&fs::read(p)?),
        });
    }
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg,
        outputs: entries,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
