//! Annotated dialogue-NLU corpora.
//!
//! Both supported datasets are normalized into the same format-neutral types
//! ([`DomainOntology`], [`AnnotatedUtterance`], [`FoldSplit`]), so everything
//! downstream is dataset-agnostic.

mod clinc;
mod folds;
mod nlupp;
mod snapshot;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::normalize::normalize_value;
use crate::{Error, Result};

pub use clinc::{load_clinc, ClincCorpus, ClincDomain, CLINC_INTENTS_PER_DOMAIN};
pub use folds::{
    make_folds, sample_efficiency_split, sample_efficiency_split_with, SAMPLE_EFFICIENCY_TEST_SIZE,
};
pub use nlupp::{load_nluplusplus, NluppCorpus, NLUPP_FOLD_FILES};
pub use snapshot::{corpus_fingerprint, read_snapshot, write_snapshot, SnapshotRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentClass {
    pub name: String,
    /// Phrase completing "did the user ...?", e.g. `intend to talk about some booking`.
    pub description: String,
    /// Full question supplied by the ontology; used verbatim when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotClass {
    pub name: String,
    /// Phrase completing "what is the ... mentioned?", e.g. `number of people`.
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

impl IntentClass {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            question: None,
        }
    }
}

impl SlotClass {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            question: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainOntology {
    pub domain_name: String,
    pub intents: Vec<IntentClass>,
    #[serde(default)]
    pub slots: Vec<SlotClass>,
}

impl DomainOntology {
    /// Builds an ontology and checks its invariants.
    pub fn new(
        domain_name: impl Into<String>,
        intents: Vec<IntentClass>,
        slots: Vec<SlotClass>,
    ) -> Result<Self> {
        let ontology = Self {
            domain_name: domain_name.into(),
            intents,
            slots,
        };
        ontology.validate()?;
        Ok(ontology)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Ontology {
            domain: self.domain_name.clone(),
            message,
        };
        if self.domain_name.trim().is_empty() {
            return Err(fail("empty domain name".into()));
        }
        let mut seen = HashSet::new();
        for intent in &self.intents {
            if !seen.insert(intent.name.as_str()) {
                return Err(fail(format!("duplicate intent class `{}`", intent.name)));
            }
            if intent.description.trim().is_empty() {
                return Err(fail(format!("intent `{}` has no description", intent.name)));
            }
        }
        seen.clear();
        for slot in &self.slots {
            if !seen.insert(slot.name.as_str()) {
                return Err(fail(format!("duplicate slot class `{}`", slot.name)));
            }
            if slot.description.trim().is_empty() {
                return Err(fail(format!("slot `{}` has no description", slot.name)));
            }
        }
        Ok(())
    }

    pub fn intent(&self, name: &str) -> Option<&IntentClass> {
        self.intents.iter().find(|c| c.name == name)
    }

    pub fn slot(&self, name: &str) -> Option<&SlotClass> {
        self.slots.iter().find(|c| c.name == name)
    }

    pub fn intent_names(&self) -> impl Iterator<Item = &str> {
        self.intents.iter().map(|c| c.name.as_str())
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|c| c.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAnnotation {
    pub slot: String,
    pub value: String,
    /// Character span `[start, end)` into the utterance text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub id: String,
    pub text: String,
    /// Empty for out-of-scope utterances; several entries for factorized labels.
    #[serde(default)]
    pub gold_intents: BTreeSet<String>,
    #[serde(default)]
    pub gold_slots: Vec<SlotAnnotation>,
}

impl AnnotatedUtterance {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_intents: BTreeSet::new(),
            gold_slots: Vec::new(),
        }
    }

    pub fn with_intents<I, S>(mut self, intents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.gold_intents = intents.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_slot(mut self, slot: impl Into<String>, value: impl Into<String>) -> Self {
        self.gold_slots.push(SlotAnnotation {
            slot: slot.into(),
            value: value.into(),
            span: None,
        });
        self
    }

    /// Gold values of one slot, in utterance order (by span start when spans exist).
    pub fn slot_values(&self, slot: &str) -> Vec<&str> {
        let mut values: Vec<&SlotAnnotation> =
            self.gold_slots.iter().filter(|a| a.slot == slot).collect();
        values.sort_by_key(|a| a.span.map(|(start, _)| start).unwrap_or(usize::MAX));
        values.into_iter().map(|a| a.value.as_str()).collect()
    }

    /// Checks referential integrity against `ontology` and span consistency.
    pub fn validate(&self, ontology: &DomainOntology) -> Result<()> {
        let fail = |message: String| Error::Validation {
            utterance_id: self.id.clone(),
            message,
        };
        for intent in &self.gold_intents {
            if ontology.intent(intent).is_none() {
                return Err(fail(format!(
                    "unknown intent `{intent}` in domain {}",
                    ontology.domain_name
                )));
            }
        }
        for annotation in &self.gold_slots {
            if ontology.slot(&annotation.slot).is_none() {
                return Err(fail(format!(
                    "unknown slot `{}` in domain {}",
                    annotation.slot, ontology.domain_name
                )));
            }
            if let Some((start, end)) = annotation.span {
                let covered = char_slice(&self.text, start, end).ok_or_else(|| {
                    fail(format!(
                        "span [{start}, {end}) of slot `{}` is outside the text",
                        annotation.slot
                    ))
                })?;
                if normalize_value(covered) != normalize_value(&annotation.value) {
                    return Err(fail(format!(
                        "span [{start}, {end}) covers `{covered}` but slot `{}` has value `{}`",
                        annotation.slot, annotation.value
                    )));
                }
            }
        }
        Ok(())
    }
}

fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    let from = indices.nth(start)?;
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1)?
    };
    text.get(from..to)
}

/// One cross-validation fold: a small training portion and its evaluation set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Fold regimes of the few-shot protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldSetup {
    #[serde(rename = "10")]
    TenFold,
    #[serde(rename = "20")]
    TwentyFold,
}

impl FoldSetup {
    pub fn folds(self) -> usize {
        match self {
            FoldSetup::TenFold => 10,
            FoldSetup::TwentyFold => 20,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FoldSetup::TenFold => "10F",
            FoldSetup::TwentyFold => "20F",
        }
    }
}

impl std::str::FromStr for FoldSetup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "10" | "10f" | "10-fold" => Ok(FoldSetup::TenFold),
            "20" | "20f" | "20-fold" => Ok(FoldSetup::TwentyFold),
            other => Err(Error::invalid(format!("unknown fold setup `{other}`"))),
        }
    }
}

/// An ontology together with its annotated utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCorpus {
    pub ontology: DomainOntology,
    pub utterances: Vec<AnnotatedUtterance>,
}

impl DomainCorpus {
    pub fn new(ontology: DomainOntology, utterances: Vec<AnnotatedUtterance>) -> Result<Self> {
        let corpus = Self {
            ontology,
            utterances,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        self.ontology.validate()?;
        let mut ids = HashSet::new();
        for utterance in &self.utterances {
            if !ids.insert(utterance.id.as_str()) {
                return Err(Error::Validation {
                    utterance_id: utterance.id.clone(),
                    message: "duplicate utterance id".into(),
                });
            }
            utterance.validate(&self.ontology)?;
        }
        Ok(())
    }

    pub fn index(&self) -> HashMap<&str, &AnnotatedUtterance> {
        self.utterances.iter().map(|u| (u.id.as_str(), u)).collect()
    }

    /// Resolves ids against this corpus, preserving the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<AnnotatedUtterance>> {
        let index = self.index();
        ids.iter()
            .map(|id| {
                index.get(id.as_str()).map(|u| (*u).clone()).ok_or_else(|| {
                    Error::invalid(format!(
                        "utterance id `{id}` not in domain {}",
                        self.ontology.domain_name
                    ))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ontology() -> DomainOntology {
        DomainOntology::new(
            "hotels",
            vec![
                IntentClass::new("booking", "intend to talk about some booking"),
                IntentClass::new("room", "intend to talk about rooms"),
            ],
            vec![SlotClass::new("people", "number of people")],
        )
        .unwrap()
    }

    #[test]
    fn duplicate_classes_rejected() {
        let err = DomainOntology::new(
            "x",
            vec![IntentClass::new("a", "d"), IntentClass::new("a", "e")],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate intent"));
        assert!(DomainOntology::new("", vec![], vec![]).is_err());
        assert!(DomainOntology::new("x", vec![IntentClass::new("a", " ")], vec![]).is_err());
    }

    #[test]
    fn unknown_labels_name_the_utterance() {
        let o = ontology();
        let u = AnnotatedUtterance::new("u7", "hi").with_intents(["greet"]);
        match u.validate(&o).unwrap_err() {
            Error::Validation { utterance_id, .. } => assert_eq!(utterance_id, "u7"),
            other => panic!("unexpected {other:?}"),
        }
        let u = AnnotatedUtterance::new("u8", "hi").with_slot("date", "today");
        assert!(u.validate(&o).is_err());
    }

    #[test]
    fn spans_are_character_offsets() {
        let o = ontology();
        let mut u = AnnotatedUtterance::new("u1", "café for 2 people");
        u.gold_slots.push(SlotAnnotation {
            slot: "people".into(),
            value: "2 people".into(),
            span: Some((9, 17)),
        });
        u.validate(&o).unwrap();
        u.gold_slots[0].span = Some((8, 17));
        // " 2 people" trims to the value
        u.validate(&o).unwrap();
        u.gold_slots[0].span = Some((5, 17));
        assert!(u.validate(&o).is_err());
        u.gold_slots[0].span = Some((9, 40));
        assert!(u.validate(&o).is_err());
    }

    #[test]
    fn slot_values_follow_span_order() {
        let mut u = AnnotatedUtterance::new("u", "from 5 to 7");
        u.gold_slots = vec![
            SlotAnnotation {
                slot: "time".into(),
                value: "7".into(),
                span: Some((10, 11)),
            },
            SlotAnnotation {
                slot: "time".into(),
                value: "5".into(),
                span: Some((5, 6)),
            },
        ];
        assert_eq!(u.slot_values("time"), vec!["5", "7"]);
        assert!(u.slot_values("date").is_empty());
    }

    #[test]
    fn fold_setup_parsing() {
        assert_eq!("20".parse::<FoldSetup>().unwrap(), FoldSetup::TwentyFold);
        assert_eq!("10F".parse::<FoldSetup>().unwrap().folds(), 10);
        assert!("5".parse::<FoldSetup>().is_err());
    }
}
