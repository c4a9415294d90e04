//! Stage directories and their manifests.
//!
//! Every stage writes into `<out>/<stage>/` and finishes with a
//! `manifest.json` that lists the inputs it read and the files it wrote,
//! each with a SHA-256 content hash, plus the fingerprint of the
//! configuration it ran under. Later stages refuse to read a stage whose
//! fingerprint or hashes no longer match.

use std::fs;
use std::path::{Path, PathBuf};

use affectmix::seeding::content_hash;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, or absolute for external inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    /// Hash of the configuration sections this stage depends on.
    pub fingerprint: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub details: serde_json::Value,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Ok(content_hash(&bytes))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::InvalidData(format!("{}: {e}", path.display())))
}

/// Collects the outputs of one stage.
pub struct StageWriter {
    out: PathBuf,
    stage: &'static str,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

impl StageWriter {
    /// Clears `<out>/<stage>/` and starts a new run of the stage.
    pub fn begin(out: &Path, stage: &'static str) -> Result<Self> {
        let dir = out.join(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(CliError::io(format!("clearing {}", dir.display())))?;
        }
        fs::create_dir_all(&dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        Ok(StageWriter {
            out: out.to_path_buf(),
            stage,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(self.stage).join(name)
    }

    /// Records a file this stage has written itself.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let sha256 = hash_file(&self.path(name))?;
        self.outputs.push(FileEntry {
            path: format!("{}/{name}", self.stage),
            sha256,
        });
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.path(name), bytes)?;
        self.outputs.push(FileEntry {
            path: format!("{}/{name}", self.stage),
            sha256: content_hash(bytes),
        });
        Ok(())
    }

    pub fn external_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = hash_file(path)?;
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Lists every output of a prior stage as an input of this one.
    pub fn stage_input(&mut self, prior: &StageManifest) {
        self.inputs.extend(prior.outputs.iter().cloned());
    }

    pub fn finish(self, seed: u64, fingerprint: String, details: serde_json::Value) -> Result<StageManifest> {
        let path = self.path(MANIFEST);
        let manifest = StageManifest {
            stage: self.stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            fingerprint,
            inputs: self.inputs,
            outputs: self.outputs,
            details,
        };
        write_file(&path, &to_json(&manifest))?;
        Ok(manifest)
    }
}

/// Loads the manifest of a finished stage and checks it against the
/// expected fingerprint and the files on disk.
pub fn require(out: &Path, stage: &str, fingerprint: &str) -> Result<StageManifest> {
    let path = out.join(stage).join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::MissingPriorStage {
            stage: stage.to_string(),
            reason: format!("{} not found", path.display()),
        });
    }
    let manifest: StageManifest = read_json(&path)?;
    if manifest.fingerprint != fingerprint {
        return Err(CliError::MissingPriorStage {
            stage: stage.to_string(),
            reason: "its outputs were produced under a different configuration".into(),
        });
    }
    for entry in &manifest.outputs {
        let file = out.join(&entry.path);
        if !file.is_file() || hash_file(&file)? != entry.sha256 {
            return Err(CliError::CorruptArtifact { path: file });
        }
    }
    Ok(manifest)
}

/// Like [`require`] but `None` when the stage has never run.
pub fn optional(out: &Path, stage: &str, fingerprint: &str) -> Result<Option<StageManifest>> {
    if out.join(stage).join(MANIFEST).is_file() {
        require(out, stage, fingerprint).map(Some)
    } else {
        Ok(None)
    }
}
