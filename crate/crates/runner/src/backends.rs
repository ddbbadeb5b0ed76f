//! Turning backend and encoder selections into live handles.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nluqa_core::embedding::{CachedEncoder, HashingEncoder, SentenceEncoder};
use nluqa_models::oracle::GoldOracle;
use nluqa_models::registry::ModelRegistry;
use nluqa_models::t5::{T5Backend, T5Config};
use nluqa_models::tokenizer::TextTokenizer;
use nluqa_models::Seq2SeqBackend;

use crate::data::LoadedDomain;
use crate::error::{Result, RunError};
use crate::spec::{BackendSpec, EncoderSpec};

pub const REGISTRY_ENV: &str = "NLUQA_MODEL_REGISTRY";
const DEFAULT_REGISTRY: &str = "configs/models.toml";

/// Explicit path, else `$NLUQA_MODEL_REGISTRY`, else `configs/models.toml`.
pub fn registry_path(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(REGISTRY_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_REGISTRY))
}

pub fn load_registry(explicit: Option<&Path>) -> Result<ModelRegistry> {
    let path = registry_path(explicit);
    if !path.is_file() {
        return Err(RunError::config(format!(
            "model registry {} not found (set {REGISTRY_ENV})",
            path.display()
        )));
    }
    Ok(ModelRegistry::from_file(&path)?)
}

/// Splits like the `Whitespace` pre-tokenizer: runs of word characters and
/// runs of other non-space characters.
fn word_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_is_word = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            continue;
        }
        let is_word = c.is_alphanumeric() || c == '_';
        if !current.is_empty() && is_word != current_is_word {
            out.push(std::mem::take(&mut current));
        }
        current_is_word = is_word;
        current.push(c);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// A tiny T5 whose word-level vocabulary covers `texts`.
pub fn tiny_random_backend(texts: &[String], seed: u64) -> Result<T5Backend> {
    let words: BTreeSet<String> = texts
        .iter()
        .flat_map(|t| word_pieces(t))
        .map(|w| w.to_lowercase())
        .collect();
    let words: Vec<String> = words.into_iter().collect();
    let tokenizer = TextTokenizer::word_level(&words)?;
    let cfg = T5Config::tiny(tokenizer.vocab_size());
    Ok(T5Backend::random(format!("tiny-random-{seed}"), cfg, tokenizer, seed)?)
}

/// Builds the backend for a run. `vocabulary` is consulted only by the
/// tiny random backend and should return every text it may see.
pub fn build_backend(
    spec: &BackendSpec,
    domains: &[LoadedDomain],
    vocabulary: impl FnOnce() -> Vec<String>,
) -> Result<Arc<dyn Seq2SeqBackend>> {
    match spec {
        BackendSpec::GoldOracle => Ok(Arc::new(GoldOracle::new(domains.iter().map(|d| &d.corpus))?)),
        BackendSpec::TinyRandom { seed } => Ok(Arc::new(tiny_random_backend(&vocabulary(), *seed)?)),
        BackendSpec::Checkpoint {
            name,
            registry,
            generation_batch,
        } => {
            let registry = load_registry(registry.as_deref())?;
            let dir = registry.checkpoint_dir(name)?;
            if !dir.is_dir() {
                return Err(RunError::config(format!(
                    "checkpoint `{name}` is not in the model cache ({}); download it there or set {}",
                    dir.display(),
                    nluqa_models::registry::CACHE_ENV
                )));
            }
            let mut backend = registry.load_checkpoint(name)?;
            if let Some(batch) = generation_batch {
                backend = backend.with_generation_batch(*batch);
            }
            Ok(Arc::new(backend))
        }
    }
}

pub fn build_encoder(spec: &EncoderSpec) -> Result<Arc<dyn SentenceEncoder>> {
    match spec {
        EncoderSpec::Hashing { dimension } => Ok(Arc::new(CachedEncoder::new(HashingEncoder::new(*dimension)?))),
        EncoderSpec::Registry { name, registry } => {
            let registry = load_registry(registry.as_deref())?;
            let dir = registry.encoder_dir(name)?;
            if !dir.is_dir() {
                return Err(RunError::config(format!(
                    "encoder `{name}` is not in the model cache ({})",
                    dir.display()
                )));
            }
            Ok(Arc::new(CachedEncoder::new(registry.load_encoder(name)?)))
        }
    }
}
