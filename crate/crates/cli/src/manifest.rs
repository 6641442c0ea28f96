//! Run manifest written beside every command's outputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use pcm_core::config::RunConfig;
use pcm_core::PcmError;

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct CacheEntry {
    pub path: PathBuf,
    pub reused: bool,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub cache: Vec<CacheEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut file = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_failure(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new("io", format!("io error on {}: {e}", path.display()))
}

/// Hash of the effective configuration in canonical JSON form.
pub fn config_hash(config: &RunConfig) -> Result<(String, serde_json::Value), Failure> {
    let value = serde_json::to_value(config).map_err(|e| Failure::from(PcmError::Config(e.to_string())))?;
    let text = serde_json::to_string(&value).map_err(|e| Failure::from(PcmError::Config(e.to_string())))?;
    Ok((hex::encode(Sha256::digest(text.as_bytes())), value))
}

/// Collects inputs and outputs while a command runs.
#[derive(Debug, Default)]
pub struct Recorder {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub cache: Vec<CacheEntry>,
}

impl Recorder {
    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    pub fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(
        self,
        path: &Path,
        command: &str,
        argv: &[String],
        config: &RunConfig,
    ) -> Result<Manifest, Failure> {
        let (config_hash, value) = config_hash(config)?;
        let entries = |paths: &[PathBuf]| -> Result<Vec<FileEntry>, Failure> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileEntry {
                        path: p.clone(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let versions = BTreeMap::from([
            ("pcm-segment".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("pcm-core".to_string(), pcm_core::VERSION.to_string()),
        ]);
        let manifest = Manifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            versions,
            seed: config.seed,
            config_hash,
            config: value,
            inputs: entries(&self.inputs)?,
            outputs: entries(&self.outputs)?,
            cache: self.cache,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::from(PcmError::Config(e.to_string())))?;
        std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))?;
        Ok(manifest)
    }
}
