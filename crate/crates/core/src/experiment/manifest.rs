//! `manifest.json`: config echo, per-generation files with SHA-256 hashes,
//! completion flags and metric rows.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "collapse-lab-manifest";
const MANIFEST_VERSION: u32 = 1;

/// A file inside the run directory and the hash of its contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl FileEntry {
    pub fn new(path: &str, bytes: &[u8]) -> Self {
        FileEntry {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
        }
    }

    /// Reads the file and checks its hash.
    pub fn read_verified(&self, dir: &Path) -> Result<Vec<u8>> {
        let full = dir.join(&self.path);
        let bytes = fs::read(&full).map_err(|e| {
            Error::Integrity(format!(
                "{} listed in manifest is unreadable: {e}",
                self.path
            ))
        })?;
        let actual = sha256_hex(&bytes);
        if actual != self.sha256 {
            return Err(Error::Integrity(format!(
                "hash mismatch for {}: manifest {} but file {}",
                self.path, self.sha256, actual
            )));
        }
        Ok(bytes)
    }

    pub fn verify(&self, dir: &Path) -> Result<()> {
        self.read_verified(dir).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationEntry {
    pub generation: u32,
    pub complete: bool,
    pub model: FileEntry,
    pub data: FileEntry,
    pub metrics: MetricReport,
    pub train_loss: f64,
    pub train_seconds: f64,
    pub sample_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: Map<String, Value>,
    pub classifier: Option<FileEntry>,
    pub generations: Vec<GenerationEntry>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config: config.to_flat(),
            classifier: None,
            generations: Vec::new(),
        }
    }

    /// Leading run of complete generations, in order.
    pub fn completed(&self) -> impl Iterator<Item = &GenerationEntry> {
        self.generations
            .iter()
            .enumerate()
            .take_while(|(i, e)| e.complete && e.generation as usize == *i)
            .map(|(_, e)| e)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::config(format!("{} has no {MANIFEST_FILE}", dir.display()))
            } else {
                Error::io(&path, e)
            }
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Integrity(format!("corrupt {MANIFEST_FILE}: {e}")))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Error::Integrity(format!(
                "{MANIFEST_FILE} has format {:?} version {}",
                manifest.format, manifest.version
            )));
        }
        Ok(manifest)
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
