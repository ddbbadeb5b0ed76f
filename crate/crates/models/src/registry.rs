//! Named checkpoints and encoders, resolved against a local model cache.
//!
//! ```toml
//! [checkpoints.flan-t5-base]
//! hub_id = "google/flan-t5-base"
//!
//! [encoders.mpnet]
//! hub_id = "sentence-transformers/all-mpnet-base-v2"
//! pooling = "mean"
//! ```
//!
//! A checkpoint lives in `<cache>/<dir>`, where `dir` defaults to the hub id
//! with `/` replaced by `--`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{Pooling, TransformerEncoder};
use crate::t5::T5Backend;
use crate::{ModelError, Result};

pub const CACHE_ENV: &str = "NLUQA_MODEL_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub hub_id: String,
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderEntry {
    pub hub_id: String,
    #[serde(default)]
    pub dir: Option<String>,
    pub pooling: Pooling,
    /// Safetensors file with a `projection.linear` dense layer, relative to
    /// the encoder directory.
    #[serde(default)]
    pub projection: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRegistry {
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoints: BTreeMap<String, CheckpointEntry>,
    #[serde(default)]
    pub encoders: BTreeMap<String, EncoderEntry>,
}

fn local_dir(hub_id: &str, dir: &Option<String>) -> String {
    dir.clone().unwrap_or_else(|| hub_id.replace('/', "--"))
}

impl ModelRegistry {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::load(path, e))?;
        toml::from_str(&text).map_err(|e| ModelError::load(path, e))
    }

    /// `NLUQA_MODEL_CACHE` if set, else `cache_dir` from the file, else
    /// `models/` under the working directory.
    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| PathBuf::from("models"))
    }

    pub fn checkpoint(&self, name: &str) -> Result<&CheckpointEntry> {
        self.checkpoints
            .get(name)
            .ok_or_else(|| ModelError::Config(format!("unknown checkpoint `{name}`")))
    }

    pub fn encoder(&self, name: &str) -> Result<&EncoderEntry> {
        self.encoders
            .get(name)
            .ok_or_else(|| ModelError::Config(format!("unknown encoder `{name}`")))
    }

    pub fn checkpoint_dir(&self, name: &str) -> Result<PathBuf> {
        let entry = self.checkpoint(name)?;
        Ok(self.cache_root().join(local_dir(&entry.hub_id, &entry.dir)))
    }

    pub fn encoder_dir(&self, name: &str) -> Result<PathBuf> {
        let entry = self.encoder(name)?;
        Ok(self.cache_root().join(local_dir(&entry.hub_id, &entry.dir)))
    }

    pub fn load_checkpoint(&self, name: &str) -> Result<T5Backend> {
        T5Backend::load(name, &self.checkpoint_dir(name)?)
    }

    pub fn load_encoder(&self, name: &str) -> Result<TransformerEncoder> {
        let entry = self.encoder(name)?;
        let dir = self.encoder_dir(name)?;
        let projection = entry.projection.as_ref().map(|p| dir.join(p));
        TransformerEncoder::load(name, &dir, entry.pooling, projection.as_deref())
    }
}
