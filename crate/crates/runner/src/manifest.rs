//! Run manifests and atomic file writes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use nluqa_models::TrainConfig;

use crate::error::{Result, RunError};
use crate::spec::{Protocol, RunSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPEC_FILE: &str = "spec.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Partial,
}

/// Crate version plus the git revision the binary was built from.
pub fn code_version() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("NLUQA_GIT_REV"))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RunError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| RunError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| RunError::io(path, e))?;
    tmp.persist(path).map_err(|e| RunError::io(path, e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub protocol: Protocol,
    pub spec_hash: String,
    pub seed: u64,
    /// Domain name to corpus fingerprint.
    pub corpus_fingerprints: BTreeMap<String, String>,
    pub fold_setup: String,
    pub template: String,
    pub template_tag: String,
    pub backend_id: String,
    pub code_version: String,
    /// Training settings with defaults filled in.
    pub train: TrainConfig,
    pub status: RunStatus,
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: Option<u64>,
    #[serde(default)]
    pub completed_units: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
    pub spec: RunSpec,
}

impl Manifest {
    pub fn new(spec: &RunSpec, fingerprints: BTreeMap<String, String>, backend_id: String) -> Self {
        Self {
            name: spec.name.clone(),
            protocol: spec.protocol,
            spec_hash: spec.content_hash(),
            seed: spec.train.seed,
            corpus_fingerprints: fingerprints,
            fold_setup: spec.folds.label(),
            template: spec.template.label(),
            template_tag: spec.template.tag(),
            backend_id,
            code_version: code_version(),
            train: spec.train.resolved(),
            status: RunStatus::Running,
            started_unix: unix_now(),
            finished_unix: None,
            completed_units: Vec::new(),
            warnings: Vec::new(),
            error: None,
            spec: spec.clone(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// Writes `manifest.json` and the resolved `spec.toml`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join(MANIFEST_FILE), self)?;
        write_atomic(&dir.join(SPEC_FILE), self.spec.to_toml()?.as_bytes())
    }

    /// Same spec over the same data: earlier work can be reused.
    pub fn same_run(&self, other: &Manifest) -> bool {
        self.spec_hash == other.spec_hash && self.corpus_fingerprints == other.corpus_fingerprints
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        if !self.warnings.contains(&message) {
            self.warnings.push(message);
        }
    }
}
