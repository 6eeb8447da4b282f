//! Run manifests: what was run, with which seeds, and what it produced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Table,
    Plot,
    Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the output directory.
    pub path: PathBuf,
    pub kind: OutputKind,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: usize,
    pub seed: u64,
    /// Seed of the field actually used, after conditioning rejections.
    pub field_seed: Option<u64>,
    pub rejections: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A fitted exponent or slope with its 95% interval half-width, when one
/// can be formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub label: String,
    pub estimate: f64,
    pub ci95: Option<f64>,
    /// Per-task values the interval was built from.
    pub values: Vec<f64>,
}

/// Set when the memory cap shortened the `n` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub requested_n_max: usize,
    pub reached_n_max: usize,
    pub cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub output_dir: PathBuf,
    pub tasks: Vec<TaskRecord>,
    pub outputs: Vec<OutputRecord>,
    pub invariants: Vec<InvariantResult>,
    pub fits: Vec<FitSummary>,
    pub truncation: Option<Truncation>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.output_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    /// Outputs whose file is gone or whose checksum changed.
    pub fn stale_outputs(&self) -> Vec<PathBuf> {
        self.outputs
            .iter()
            .filter(|o| file_sha256(&self.output_dir.join(&o.path)).ok().as_deref() != Some(o.sha256.as_str()))
            .map(|o| o.path.clone())
            .collect()
    }

    /// Output checksums keyed by relative path, in manifest order.
    pub fn checksums(&self) -> Vec<(PathBuf, String)> {
        self.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect()
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

/// Re-runs the manifest's config into `dir` and reports whether every
/// output checksum matches.
pub fn reproduce(manifest: &RunManifest, dir: &Path) -> Result<(RunManifest, bool)> {
    let mut config = manifest.config.clone();
    config.output = Some(dir.to_path_buf());
    let again = crate::run::run_experiment(&config)?;
    let same = again.config_hash == manifest.config_hash && again.checksums() == manifest.checksums();
    Ok((again, same))
}
