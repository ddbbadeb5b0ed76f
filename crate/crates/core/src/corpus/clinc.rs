//! CLINC-150 loader.
//!
//! Expected files under the dataset root:
//!
//! - `data_full.json`: the release, `{"train": [[text, intent], ..], "val", "test",
//!   "oos_train", "oos_val", "oos_test"}`
//! - `domains.json`: `{domain: [intent, ..]}`, fifteen intents per domain
//! - `descriptions.json`: `{intent: description}` or `{intent: {"description", "question"}}`
//!
//! The release carries no class descriptions, so the description file is
//! mandatory. Out-of-scope utterances are kept with an empty gold set in
//! [`ClincCorpus::out_of_scope`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{AnnotatedUtterance, DomainCorpus, DomainOntology, IntentClass};
use crate::{Error, Result};

pub const CLINC_INTENTS_PER_DOMAIN: usize = 15;
const OUT_OF_SCOPE: &str = "oos";

#[derive(Debug, Clone)]
pub struct ClincDomain {
    pub corpus: DomainCorpus,
    /// Ids from the release's `train` partition, in release order.
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ClincCorpus {
    pub domains: BTreeMap<String, ClincDomain>,
    pub out_of_scope: Vec<AnnotatedUtterance>,
}

impl ClincCorpus {
    pub fn domain(&self, name: &str) -> Result<&ClincDomain> {
        self.domains
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown CLINC domain `{name}`")))
    }

    pub fn intent_count(&self) -> usize {
        self.domains
            .values()
            .map(|d| d.corpus.ontology.intents.len())
            .sum()
    }
}

#[derive(Debug, Deserialize)]
struct Release {
    train: Vec<(String, String)>,
    val: Vec<(String, String)>,
    test: Vec<(String, String)>,
    #[serde(default)]
    oos_train: Vec<(String, String)>,
    #[serde(default)]
    oos_val: Vec<(String, String)>,
    #[serde(default)]
    oos_test: Vec<(String, String)>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e))
}

pub fn load_clinc(path: &Path) -> Result<ClincCorpus> {
    let release: Release = read_json(&path.join("data_full.json"))?;
    let domains_file = path.join("domains.json");
    let grouping: BTreeMap<String, Vec<String>> = read_json(&domains_file)?;
    let descriptions_file = path.join("descriptions.json");
    let descriptions: HashMap<String, Value> = read_json(&descriptions_file)?;

    let mut intent_domain: HashMap<&str, &str> = HashMap::new();
    let mut builders: BTreeMap<String, ClincDomain> = BTreeMap::new();
    for (domain, intents) in &grouping {
        if intents.len() != CLINC_INTENTS_PER_DOMAIN {
            return Err(Error::Ontology {
                domain: domain.clone(),
                message: format!(
                    "expected {CLINC_INTENTS_PER_DOMAIN} intents, found {}",
                    intents.len()
                ),
            });
        }
        let mut classes = Vec::with_capacity(intents.len());
        for intent in intents {
            if let Some(previous) = intent_domain.insert(intent, domain) {
                return Err(Error::load(
                    &domains_file,
                    format!("intent `{intent}` listed in both {previous} and {domain}"),
                ));
            }
            classes.push(describe(&descriptions_file, &descriptions, intent)?);
        }
        let ontology = DomainOntology::new(domain.clone(), classes, Vec::new())?;
        builders.insert(
            domain.clone(),
            ClincDomain {
                corpus: DomainCorpus {
                    ontology,
                    utterances: Vec::new(),
                },
                train_ids: Vec::new(),
                val_ids: Vec::new(),
                test_ids: Vec::new(),
            },
        );
    }

    let mut out_of_scope = Vec::new();
    let partitions = [
        ("train", &release.train),
        ("val", &release.val),
        ("test", &release.test),
        ("oos_train", &release.oos_train),
        ("oos_val", &release.oos_val),
        ("oos_test", &release.oos_test),
    ];
    for (partition, records) in partitions {
        for (index, (text, intent)) in records.iter().enumerate() {
            let id = format!("clinc-{partition}-{index}");
            if intent == OUT_OF_SCOPE {
                out_of_scope.push(AnnotatedUtterance::new(id, text.clone()));
                continue;
            }
            let domain = intent_domain.get(intent.as_str()).ok_or_else(|| Error::Validation {
                utterance_id: id.clone(),
                message: format!("intent `{intent}` belongs to no domain"),
            })?;
            let target = builders.get_mut(*domain).expect("domain registered above");
            match partition {
                "train" => target.train_ids.push(id.clone()),
                "val" => target.val_ids.push(id.clone()),
                _ => target.test_ids.push(id.clone()),
            }
            target
                .corpus
                .utterances
                .push(AnnotatedUtterance::new(id, text.clone()).with_intents([intent.clone()]));
        }
    }

    for domain in builders.values() {
        domain.corpus.validate()?;
    }
    Ok(ClincCorpus {
        domains: builders,
        out_of_scope,
    })
}

fn describe(file: &Path, descriptions: &HashMap<String, Value>, intent: &str) -> Result<IntentClass> {
    match descriptions.get(intent) {
        Some(Value::String(description)) => Ok(IntentClass::new(intent, description.clone())),
        Some(Value::Object(fields)) => {
            let description = fields
                .get("description")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::load(file, format!("intent `{intent}`: missing description")))?;
            let mut class = IntentClass::new(intent, description);
            class.question = fields
                .get("question")
                .and_then(Value::as_str)
                .map(str::to_string);
            Ok(class)
        }
        _ => Err(Error::load(
            file,
            format!("no description for intent `{intent}`"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(root: &Path, per_domain: usize) {
        let mut grouping = serde_json::Map::new();
        let mut descriptions = serde_json::Map::new();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for d in 0..2 {
            let intents: Vec<String> = (0..per_domain).map(|i| format!("d{d}_i{i}")).collect();
            for intent in &intents {
                descriptions.insert(intent.clone(), Value::from(format!("intend to do {intent}")));
                train.push((format!("please {intent}"), intent.clone()));
                test.push((format!("could you {intent}"), intent.clone()));
            }
            grouping.insert(format!("dom{d}"), Value::from(intents));
        }
        let release = serde_json::json!({
            "train": train, "val": [], "test": test,
            "oos_train": [["what is love", "oos"]], "oos_val": [], "oos_test": []
        });
        fs::write(root.join("data_full.json"), release.to_string()).unwrap();
        fs::write(root.join("domains.json"), Value::Object(grouping).to_string()).unwrap();
        fs::write(
            root.join("descriptions.json"),
            Value::Object(descriptions).to_string(),
        )
        .unwrap();
    }

    #[test]
    fn loads_domains_and_out_of_scope() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 15);
        let corpus = load_clinc(dir.path()).unwrap();
        assert_eq!(corpus.domains.len(), 2);
        assert_eq!(corpus.intent_count(), 30);
        let dom0 = corpus.domain("dom0").unwrap();
        assert_eq!(dom0.corpus.ontology.intents.len(), 15);
        assert!(dom0.corpus.ontology.slots.is_empty());
        assert_eq!(dom0.train_ids.len(), 15);
        assert_eq!(dom0.test_ids.len(), 15);
        assert_eq!(corpus.out_of_scope.len(), 1);
        assert!(corpus.out_of_scope[0].gold_intents.is_empty());
    }

    #[test]
    fn wrong_intent_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 14);
        let err = load_clinc(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected 15 intents"), "{err}");
    }

    #[test]
    fn corrupted_release_fails_without_partial_corpus() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 15);
        fs::write(dir.path().join("data_full.json"), "{\"train\": [[\"a\", ").unwrap();
        let err = load_clinc(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn missing_description_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 15);
        fs::write(dir.path().join("descriptions.json"), "{}").unwrap();
        let err = load_clinc(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no description"), "{err}");
    }
}
