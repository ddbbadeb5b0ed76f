//! Loading the corpora and folds a run spec asks for.

use std::path::{Path, PathBuf};

use nluqa_core::corpus::{
    corpus_fingerprint, load_clinc, load_nluplusplus, make_folds, DomainCorpus, FoldSplit,
};

use crate::error::{Result, RunError};
use crate::spec::{DatasetKind, DatasetSpec, FoldSpec};

pub const DATA_ROOT_ENV: &str = "NLUQA_DATA_ROOT";

/// One domain with the folds a run asks for.
#[derive(Debug, Clone)]
pub struct LoadedDomain {
    pub name: String,
    pub corpus: DomainCorpus,
    pub folds: Vec<FoldSplit>,
    /// Utterances available to the sample-efficiency protocol (the whole
    /// NLU++ domain, or the CLINC train partition).
    pub pool_ids: Vec<String>,
    pub fingerprint: String,
}

/// `root` from the run spec, else `$NLUQA_DATA_ROOT/<dataset>`, else
/// `data/<dataset>`.
pub fn resolve_root(spec: &DatasetSpec) -> PathBuf {
    if let Some(root) = &spec.root {
        return root.clone();
    }
    let base = std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"));
    base.join(spec.kind.dir_name())
}

fn missing(root: &Path, what: &str) -> RunError {
    RunError::config(format!(
        "{what} not found under {} (set [dataset].root or {DATA_ROOT_ENV})",
        root.display()
    ))
}

pub fn load_domains(dataset: &DatasetSpec, domains: &[String], folds: FoldSpec) -> Result<Vec<LoadedDomain>> {
    let root = resolve_root(dataset);
    if !root.is_dir() {
        return Err(missing(&root, "dataset directory"));
    }
    match dataset.kind {
        DatasetKind::Nluplusplus => domains
            .iter()
            .map(|name| {
                let loaded = load_nluplusplus(&root, name)?;
                let splits = match folds {
                    FoldSpec::Preset(setup) => loaded.folds(setup).to_vec(),
                    FoldSpec::Custom { k, seed } => make_folds(&loaded.corpus.utterances, k, seed)?,
                };
                let pool_ids = loaded.corpus.utterances.iter().map(|u| u.id.clone()).collect();
                Ok(LoadedDomain {
                    name: name.clone(),
                    fingerprint: corpus_fingerprint(&loaded.corpus),
                    corpus: loaded.corpus,
                    folds: splits,
                    pool_ids,
                })
            })
            .collect(),
        DatasetKind::Clinc => {
            if !root.join("data_full.json").is_file() {
                return Err(missing(&root, "data_full.json"));
            }
            let clinc = load_clinc(&root)?;
            let (k, seed) = match folds {
                FoldSpec::Preset(setup) => (setup.folds(), 0),
                FoldSpec::Custom { k, seed } => (k, seed),
            };
            domains
                .iter()
                .map(|name| {
                    let domain = clinc.domain(name)?;
                    let train = domain.corpus.select(&domain.train_ids)?;
                    Ok(LoadedDomain {
                        name: name.clone(),
                        fingerprint: corpus_fingerprint(&domain.corpus),
                        folds: make_folds(&train, k, seed)?,
                        corpus: domain.corpus.clone(),
                        pool_ids: domain.train_ids.clone(),
                    })
                })
                .collect()
        }
    }
}

/// Keeps only the folds listed in `fold_ids`, in that order.
pub fn select_folds(folds: &[FoldSplit], fold_ids: Option<&[usize]>) -> Result<Vec<FoldSplit>> {
    match fold_ids {
        None => Ok(folds.to_vec()),
        Some(ids) => ids
            .iter()
            .map(|&id| {
                folds
                    .iter()
                    .find(|f| f.fold_id == id)
                    .cloned()
                    .ok_or_else(|| RunError::config(format!("fold {id} does not exist")))
            })
            .collect(),
    }
}
