//! Normalized corpus snapshot: one JSON record per utterance.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnnotatedUtterance, DomainCorpus, SlotAnnotation};
use crate::{jsonl, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub domain: String,
    pub id: String,
    pub text: String,
    pub intents: Vec<String>,
    pub slots: Vec<SlotAnnotation>,
}

impl SnapshotRecord {
    fn from_utterance(domain: &str, u: &AnnotatedUtterance) -> Self {
        Self {
            domain: domain.to_string(),
            id: u.id.clone(),
            text: u.text.clone(),
            intents: u.gold_intents.iter().cloned().collect(),
            slots: u.gold_slots.clone(),
        }
    }
}

fn records(corpus: &DomainCorpus) -> Vec<SnapshotRecord> {
    let domain = &corpus.ontology.domain_name;
    corpus
        .utterances
        .iter()
        .map(|u| SnapshotRecord::from_utterance(domain, u))
        .collect()
}

pub fn write_snapshot<W: Write>(writer: W, corpus: &DomainCorpus) -> Result<()> {
    jsonl::write_records(writer, &records(corpus))
}

pub fn read_snapshot(path: &Path) -> Result<Vec<SnapshotRecord>> {
    jsonl::read_records(path)
}

/// SHA-256 over the ontology and the snapshot, hex encoded.
pub fn corpus_fingerprint(corpus: &DomainCorpus) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&corpus.ontology).expect("ontology serializes"));
    hasher.update(b"\n");
    let mut buf = Vec::new();
    write_snapshot(&mut buf, corpus).expect("in-memory write");
    hasher.update(&buf);
    hex::encode(hasher.finalize())
}
