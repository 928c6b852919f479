//! `manifest.json`: what each stage produced, under which config hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use super::io::{read_json, sha256_file, write_json};
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "latent-walk-manifest/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    pub version: u32,
    /// Outputs per unit of work: the arm name for per-arm stages, `all` otherwise.
    pub units: BTreeMap<String, Vec<OutputFile>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub fn load_or_default(out: &Path) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST_FILE), self)
    }

    pub fn get(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(stage.name())
    }
}

/// True when every listed file exists with the recorded digest.
pub fn outputs_intact(out: &Path, files: &[OutputFile]) -> bool {
    files
        .iter()
        .all(|f| sha256_file(&out.join(&f.path)).map(|h| h == f.sha256).unwrap_or(false))
}
