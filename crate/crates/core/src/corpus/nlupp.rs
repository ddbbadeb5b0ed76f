//! NLU++ loader.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! ontology.json            shared ontology (or <domain>/ontology.json)
//! <domain>/fold0.json      ... <domain>/fold19.json
//! ```
//!
//! The ontology maps `intents` and `slots` to class entries. An entry is either
//! a description string or an object `{"description", "domain", "question"}`;
//! entries may also be grouped under a domain key (`"general"`, `"banking"`,
//! ...). Classes tagged `general` or with the requested domain are kept.
//!
//! Each fold file is a JSON array of
//! `{"text", "intents": [..], "slots": {name: {"text", "span": [s, e]}}}`.
//! The 20-fold setup trains on one file and evaluates on the other nineteen;
//! the 10-fold setup trains on the file pair `(2i, 2i+1)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{
    AnnotatedUtterance, DomainCorpus, DomainOntology, FoldSetup, FoldSplit, IntentClass,
    SlotAnnotation, SlotClass,
};
use crate::{Error, Result};

pub const NLUPP_FOLD_FILES: usize = 20;

#[derive(Debug, Clone)]
pub struct NluppCorpus {
    pub corpus: DomainCorpus,
    pub folds_10: Vec<FoldSplit>,
    pub folds_20: Vec<FoldSplit>,
}

impl NluppCorpus {
    pub fn folds(&self, setup: FoldSetup) -> &[FoldSplit] {
        match setup {
            FoldSetup::TenFold => &self.folds_10,
            FoldSetup::TwentyFold => &self.folds_20,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawUtterance {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    intents: Option<Vec<String>>,
    #[serde(default)]
    slots: Option<Map<String, Value>>,
}

/// Loads one NLU++ domain together with its published 10- and 20-fold splits.
pub fn load_nluplusplus(path: &Path, domain_name: &str) -> Result<NluppCorpus> {
    let ontology = load_ontology(path, domain_name)?;

    let mut utterances = Vec::new();
    let mut fold_members: Vec<Vec<String>> = Vec::with_capacity(NLUPP_FOLD_FILES);
    for fold in 0..NLUPP_FOLD_FILES {
        let file = path.join(domain_name).join(format!("fold{fold}.json"));
        let raw = read_fold_file(&file)?;
        let mut members = Vec::with_capacity(raw.len());
        for (index, record) in raw.into_iter().enumerate() {
            let id = record
                .id
                .clone()
                .unwrap_or_else(|| format!("{domain_name}-f{fold}-{index}"));
            let utterance = convert(&file, id, record)?;
            members.push(utterance.id.clone());
            utterances.push(utterance);
        }
        fold_members.push(members);
    }

    let corpus = DomainCorpus::new(ontology, utterances)?;
    let folds_20 = folds_from_groups(&fold_members, 1);
    let folds_10 = folds_from_groups(&fold_members, 2);
    Ok(NluppCorpus {
        corpus,
        folds_10,
        folds_20,
    })
}

fn folds_from_groups(files: &[Vec<String>], files_per_fold: usize) -> Vec<FoldSplit> {
    let n_folds = files.len() / files_per_fold;
    (0..n_folds)
        .map(|fold_id| {
            let train_files = fold_id * files_per_fold..(fold_id + 1) * files_per_fold;
            let mut train_ids = Vec::new();
            let mut test_ids = Vec::new();
            for (file_index, members) in files.iter().enumerate() {
                if train_files.contains(&file_index) {
                    train_ids.extend(members.iter().cloned());
                } else {
                    test_ids.extend(members.iter().cloned());
                }
            }
            FoldSplit {
                fold_id,
                train_ids,
                test_ids,
            }
        })
        .collect()
}

fn read_fold_file(file: &Path) -> Result<Vec<RawUtterance>> {
    let text = fs::read_to_string(file).map_err(|e| Error::load(file, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    serde_json::from_str(&text).map_err(|e| Error::load(file, e))
}

fn convert(file: &Path, id: String, record: RawUtterance) -> Result<AnnotatedUtterance> {
    let mut utterance = AnnotatedUtterance::new(id, record.text);
    utterance.gold_intents = record.intents.unwrap_or_default().into_iter().collect();
    for (slot, annotation) in record.slots.unwrap_or_default() {
        let (value, span) = match &annotation {
            Value::String(value) => (value.clone(), None),
            Value::Object(fields) => {
                let value = fields
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| {
                        Error::load(
                            file,
                            format!("utterance {}: slot `{slot}` has no text", utterance.id),
                        )
                    })?
                    .to_string();
                let span = match fields.get("span") {
                    Some(Value::Array(bounds)) if bounds.len() == 2 => {
                        match (bounds[0].as_u64(), bounds[1].as_u64()) {
                            (Some(start), Some(end)) => Some((start as usize, end as usize)),
                            _ => None,
                        }
                    }
                    _ => None,
                };
                (value, span)
            }
            _ => {
                return Err(Error::load(
                    file,
                    format!("utterance {}: malformed slot `{slot}`", utterance.id),
                ))
            }
        };
        utterance.gold_slots.push(SlotAnnotation { slot, value, span });
    }
    Ok(utterance)
}

fn ontology_path(root: &Path, domain_name: &str) -> PathBuf {
    let per_domain = root.join(domain_name).join("ontology.json");
    if per_domain.exists() {
        per_domain
    } else {
        root.join("ontology.json")
    }
}

struct ClassEntry {
    name: String,
    description: String,
    question: Option<String>,
}

fn load_ontology(root: &Path, domain_name: &str) -> Result<DomainOntology> {
    let file = ontology_path(root, domain_name);
    let text = fs::read_to_string(&file).map_err(|e| Error::load(&file, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::load(&file, e))?;
    let section = |key: &str| -> Result<Vec<ClassEntry>> {
        match value.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Object(map)) => {
                let mut out = Vec::new();
                collect_classes(&file, map, None, domain_name, &mut out)?;
                Ok(out)
            }
            Some(_) => Err(Error::load(&file, format!("`{key}` must be an object"))),
        }
    };
    let intents = section("intents")?
        .into_iter()
        .map(|c| IntentClass {
            name: c.name,
            description: c.description,
            question: c.question,
        })
        .collect();
    let slots = section("slots")?
        .into_iter()
        .map(|c| SlotClass {
            name: c.name,
            description: c.description,
            question: c.question,
        })
        .collect();
    DomainOntology::new(domain_name, intents, slots)
}

fn is_class_entry(value: &Value) -> bool {
    match value {
        Value::String(_) => true,
        Value::Object(fields) => fields.contains_key("description"),
        _ => false,
    }
}

fn domain_matches(tags: Option<&Value>, group: Option<&str>, domain_name: &str) -> bool {
    let accepts = |tag: &str| tag == "general" || tag == domain_name;
    match tags {
        Some(Value::String(tag)) => accepts(tag),
        Some(Value::Array(tags)) => tags.iter().filter_map(Value::as_str).any(accepts),
        _ => group.is_none_or(accepts),
    }
}

fn collect_classes(
    file: &Path,
    map: &Map<String, Value>,
    group: Option<&str>,
    domain_name: &str,
    out: &mut Vec<ClassEntry>,
) -> Result<()> {
    for (key, value) in map {
        if is_class_entry(value) {
            let (description, question, tags) = match value {
                Value::String(description) => (description.clone(), None, None),
                Value::Object(fields) => (
                    fields["description"]
                        .as_str()
                        .ok_or_else(|| Error::load(file, format!("class `{key}`: bad description")))?
                        .to_string(),
                    fields
                        .get("question")
                        .and_then(Value::as_str)
                        .map(str::to_string),
                    fields.get("domain"),
                ),
                _ => unreachable!(),
            };
            if domain_matches(tags, group, domain_name) {
                out.push(ClassEntry {
                    name: key.clone(),
                    description,
                    question,
                });
            }
        } else if let (Value::Object(inner), None) = (value, group) {
            collect_classes(file, inner, Some(key), domain_name, out)?;
        } else {
            return Err(Error::load(file, format!("malformed class entry `{key}`")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_dataset(root: &Path, folds: &[&str]) {
        fs::create_dir_all(root.join("hotels")).unwrap();
        fs::write(
            root.join("ontology.json"),
            r#"{
              "intents": {
                "general": {"booking": "intend to talk about some booking",
                            "change": {"description": "intend to change something"}},
                "hotels": {"room": "intend to talk about rooms"},
                "banking": {"card": "intend to talk about cards"}
              },
              "slots": {
                "people": {"description": "number of people", "domain": ["hotels"]},
                "date": {"description": "date", "domain": "general"},
                "amount": {"description": "amount of money", "domain": "banking"}
              }
            }"#,
        )
        .unwrap();
        for i in 0..NLUPP_FOLD_FILES {
            let body = folds.get(i).copied().unwrap_or("[]");
            fs::write(root.join("hotels").join(format!("fold{i}.json")), body).unwrap();
        }
    }

    #[test]
    fn grouped_ontology_keeps_general_and_domain_classes() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[]);
        let loaded = load_nluplusplus(dir.path(), "hotels").unwrap();
        let o = &loaded.corpus.ontology;
        let intents: Vec<_> = o.intent_names().collect();
        assert_eq!(intents, vec!["booking", "change", "room"]);
        let slots: Vec<_> = o.slot_names().collect();
        assert_eq!(slots, vec!["date", "people"]);
        assert!(loaded.corpus.utterances.is_empty());
        assert_eq!(loaded.folds_20.len(), 20);
        assert_eq!(loaded.folds_10.len(), 10);
    }

    #[test]
    fn fold_files_become_published_splits() {
        let dir = tempfile::tempdir().unwrap();
        let f0 = r#"[{"text": "wanna change my room reservation", "intents": ["change", "room", "booking"]}]"#;
        let f1 = r#"[{"text": "for 2 people", "slots": {"people": {"text": "2 people", "span": [4, 12]}}},
                     {"text": "hello"}]"#;
        let f2 = r#"[{"text": "book it for friday", "intents": ["booking"], "slots": {"date": {"text": "friday", "span": [12, 18], "value": {"day": "friday"}}}}]"#;
        write_dataset(dir.path(), &[f0, f1, f2]);
        let loaded = load_nluplusplus(dir.path(), "hotels").unwrap();
        assert_eq!(loaded.corpus.utterances.len(), 4);
        let first = &loaded.corpus.utterances[0];
        assert_eq!(first.id, "hotels-f0-0");
        assert_eq!(first.gold_intents.len(), 3);
        assert_eq!(loaded.corpus.utterances[1].gold_slots[0].value, "2 people");

        let f20 = &loaded.folds_20[1];
        assert_eq!(f20.train_ids, vec!["hotels-f1-0", "hotels-f1-1"]);
        assert_eq!(f20.test_ids.len(), 2);
        let f10 = &loaded.folds_10[0];
        assert_eq!(f10.train_ids.len(), 3);
        assert_eq!(f10.test_ids, vec!["hotels-f2-0"]);
        assert!(loaded.folds_10[1].train_ids == vec!["hotels-f2-0"]);
    }

    #[test]
    fn missing_fold_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[]);
        fs::remove_file(dir.path().join("hotels/fold7.json")).unwrap();
        let err = load_nluplusplus(dir.path(), "hotels").unwrap_err();
        assert!(err.to_string().contains("fold7.json"), "{err}");
    }

    #[test]
    fn unknown_class_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[r#"[{"text": "x", "intents": ["card"]}]"#]);
        match load_nluplusplus(dir.path(), "hotels").unwrap_err() {
            Error::Validation { utterance_id, .. } => assert_eq!(utterance_id, "hotels-f0-0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn per_domain_ontology_takes_precedence() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[]);
        fs::write(
            dir.path().join("hotels/ontology.json"),
            r#"{"intents": {"greet": {"description": "intend to greet", "question": "is this a greeting?"}}}"#,
        )
        .unwrap();
        let loaded = load_nluplusplus(dir.path(), "hotels").unwrap();
        let o = &loaded.corpus.ontology;
        assert_eq!(o.intents.len(), 1);
        assert_eq!(o.intents[0].question.as_deref(), Some("is this a greeting?"));
        assert!(o.slots.is_empty());
    }
}
