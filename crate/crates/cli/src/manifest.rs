//! Run manifests: a reproducibility record written atomically beside
//! every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputRecord>,
    pub wall_ms: u128,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    seed: u64,
    threads: usize,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            seed,
            threads,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hash outputs and write `<command>.manifest.json` into `dir`
    /// atomically (temp file + rename).
    pub fn write(self, dir: &Path) -> anyhow::Result<PathBuf> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            outputs.push(OutputRecord {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        let manifest = RunManifest {
            command: self.command.clone(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            threads: self.threads,
            config: self.config,
            inputs: self.inputs,
            outputs,
            wall_ms: self.started.elapsed().as_millis(),
        };
        let target = dir.join(format!("{}.manifest.json", self.command));
        let tmp = dir.join(format!(".{}.manifest.json.tmp", self.command));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
        std::fs::rename(&tmp, &target)?;
        Ok(target)
    }
}
