//! Answer decoding, prediction assembly and micro-F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedUtterance, DomainOntology};
use crate::instruction::{
    intent_options, slot_options, InstructionInstance, Task, TaskKind, NONE_OF_THE_ABOVE, UNANSWERABLE,
    VALUE_SEPARATOR, YES,
};
use crate::normalize::{normalize_answer, normalize_value};
use crate::{Error, Result};

/// Structured prediction for one utterance.
///
/// A slot missing from `slot_values` is unanswerable. Several values of one
/// slot are joined with [`VALUE_SEPARATOR`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub utterance_id: String,
    pub intents: BTreeSet<String>,
    pub slot_values: BTreeMap<String, String>,
}

impl Prediction {
    pub fn new(utterance_id: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            ..Self::default()
        }
    }

    /// The prediction that reproduces an utterance's annotation.
    pub fn from_gold(utterance: &AnnotatedUtterance) -> Self {
        let mut slots: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        for annotation in &utterance.gold_slots {
            slots.entry(annotation.slot.clone()).or_default();
        }
        let slot_values = slots
            .into_keys()
            .map(|slot| {
                let joined = utterance.slot_values(&slot).join(VALUE_SEPARATOR);
                (slot, joined)
            })
            .collect();
        Self {
            utterance_id: utterance.id.clone(),
            intents: utterance.gold_intents.clone(),
            slot_values,
        }
    }

    fn add_value(&mut self, slot: &str, value: &str) {
        self.slot_values
            .entry(slot.to_string())
            .and_modify(|v| {
                v.push_str(VALUE_SEPARATOR);
                v.push_str(value);
            })
            .or_insert_with(|| value.to_string());
    }
}

pub fn parse_id_answer(text: &str) -> bool {
    normalize_answer(text) == YES
}

pub fn parse_ve_answer(text: &str) -> Option<String> {
    let normalized = normalize_answer(text);
    if normalized.is_empty() || normalized == UNANSWERABLE {
        None
    } else {
        Some(normalize_value(text).to_string())
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn boundary_before(text: &[u8], at: usize) -> bool {
    at == 0 || !is_word_byte(text[at - 1])
}

fn boundary_after(text: &[u8], at: usize) -> bool {
    at == text.len() || !is_word_byte(text[at])
}

/// Longest option (lowercased) matching at byte offset `at`, as (index, length).
fn longest_match_at(text: &[u8], at: usize, options: &[Vec<u8>]) -> Option<(usize, usize)> {
    if !boundary_before(text, at) {
        return None;
    }
    options
        .iter()
        .enumerate()
        .filter(|(_, opt)| {
            !opt.is_empty() && text[at..].starts_with(opt) && boundary_after(text, at + opt.len())
        })
        .max_by_key(|(i, opt)| (opt.len(), std::cmp::Reverse(*i)))
        .map(|(i, opt)| (i, opt.len()))
}

fn lowered_options(options: &[String]) -> Vec<Vec<u8>> {
    options
        .iter()
        .map(|o| o.trim().to_ascii_lowercase().into_bytes())
        .collect()
}

/// Option indices named in a multiple-choice answer.
///
/// The text is scanned left to right; at each word start the longest
/// matching option is taken and the scan resumes after it. Matching is
/// ASCII case-insensitive. Unmatched text, including `none of the above`,
/// contributes nothing.
pub fn parse_mc_answer(text: &str, options: &[String]) -> BTreeSet<usize> {
    let lowered = text.to_ascii_lowercase();
    let bytes = lowered.as_bytes();
    let options = lowered_options(options);
    let mut found = BTreeSet::new();
    let mut at = 0;
    while at < bytes.len() {
        match longest_match_at(bytes, at, &options) {
            Some((index, len)) => {
                found.insert(index);
                at += len;
            }
            None => at += 1,
        }
    }
    found
}

/// Slot values named in a multiple-choice VE answer of the form
/// `<option>: <value>; <option>: <value>`.
pub fn parse_mc_ve_answer(text: &str, options: &[String]) -> BTreeMap<usize, Vec<String>> {
    let lowered_opts = lowered_options(options);
    let mut found: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    if normalize_answer(text) == NONE_OF_THE_ABOVE {
        return found;
    }
    for entry in text.split(VALUE_SEPARATOR.trim_end()) {
        let entry = entry.trim();
        let lowered = entry.to_ascii_lowercase();
        let Some((index, len)) = longest_match_at(lowered.as_bytes(), 0, &lowered_opts) else {
            continue;
        };
        let Some(rest) = entry[len..].trim_start().strip_prefix(':') else {
            continue;
        };
        if let Some(value) = parse_ve_answer(rest) {
            found.entry(index).or_default().push(value);
        }
    }
    found
}

/// Groups answers by utterance and decodes them into predictions, sorted by
/// utterance id.
pub fn assemble(
    instances: &[InstructionInstance],
    answers: &[String],
    ontology: &DomainOntology,
) -> Result<Vec<Prediction>> {
    if instances.len() != answers.len() {
        return Err(Error::invalid(format!(
            "{} instances but {} answers",
            instances.len(),
            answers.len()
        )));
    }
    let Some(first) = instances.first() else {
        return Ok(Vec::new());
    };
    let kind = first.task_kind;
    if let Some(other) = instances.iter().find(|i| i.task_kind != kind) {
        return Err(Error::invalid(format!(
            "mixed task kinds {kind:?} and {:?}",
            other.task_kind
        )));
    }

    let intent_opts = intent_options(ontology);
    let slot_opts = slot_options(ontology);
    let mut predictions: BTreeMap<&str, Prediction> = BTreeMap::new();
    for (instance, answer) in instances.iter().zip(answers) {
        let prediction = predictions
            .entry(instance.utterance_id.as_str())
            .or_insert_with(|| Prediction::new(&instance.utterance_id));
        let class = || {
            instance.class_name.as_deref().ok_or_else(|| {
                Error::invalid(format!(
                    "{kind:?} instance for {} has no class name",
                    instance.utterance_id
                ))
            })
        };
        match kind {
            TaskKind::IdBinary => {
                if parse_id_answer(answer) {
                    prediction.intents.insert(class()?.to_string());
                }
            }
            TaskKind::VeExtractive => {
                if let Some(value) = parse_ve_answer(answer) {
                    prediction.add_value(class()?, &value);
                }
            }
            TaskKind::McId => {
                for index in parse_mc_answer(answer, &intent_opts) {
                    prediction.intents.insert(ontology.intents[index].name.clone());
                }
            }
            TaskKind::McVe => {
                for (index, values) in parse_mc_ve_answer(answer, &slot_opts) {
                    for value in values {
                        prediction.add_value(&ontology.slots[index].name, &value);
                    }
                }
            }
        }
    }
    Ok(predictions.into_values().collect())
}

/// Micro-F1 from counts. With no positives anywhere (tp = fp = fn = 0) the
/// score is 1.0.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denominator = 2 * tp + fp + fn_;
    if denominator == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denominator as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold_id: usize,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Mean of the per-fold scores.
    pub micro_f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub per_fold: Vec<FoldScore>,
    /// Micro-F1 over counts pooled across folds.
    pub pooled_micro_f1: f64,
    pub aggregate_rule: String,
}

const MEAN_OF_FOLDS: &str = "mean-of-folds";

impl EvalReport {
    /// Report for a single evaluation, recorded as fold 0.
    pub fn from_counts(task: Task, tp: u64, fp: u64, fn_: u64) -> Self {
        let f1 = f1_from_counts(tp, fp, fn_);
        Self {
            task,
            micro_f1: f1,
            tp,
            fp,
            fn_,
            per_fold: vec![FoldScore {
                fold_id: 0,
                micro_f1: f1,
            }],
            pooled_micro_f1: f1,
            aggregate_rule: MEAN_OF_FOLDS.to_string(),
        }
    }

    /// Relabels a single-fold report.
    pub fn with_fold_id(mut self, fold_id: usize) -> Self {
        for fold in &mut self.per_fold {
            fold.fold_id = fold_id;
        }
        self
    }

    pub fn percent(&self) -> f64 {
        self.micro_f1 * 100.0
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} micro-F1 {:.2} over {} fold(s) (pooled {:.2}; tp={} fp={} fn={})",
            self.task,
            self.percent(),
            self.per_fold.len(),
            self.pooled_micro_f1 * 100.0,
            self.tp,
            self.fp,
            self.fn_
        )
    }
}

fn pair_up<'a>(
    preds: &'a [Prediction],
    gold: &'a [AnnotatedUtterance],
) -> Result<Vec<(&'a Prediction, &'a AnnotatedUtterance)>> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.utterance_id.as_str(), p).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for {}", p.utterance_id)));
        }
    }
    if by_id.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold utterances",
            by_id.len(),
            gold.len()
        )));
    }
    gold.iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::invalid(format!("no prediction for utterance {}", g.id)))
        })
        .collect()
}

fn count_sets<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> (u64, u64, u64) {
    let tp = predicted.intersection(gold).count() as u64;
    (tp, predicted.len() as u64 - tp, gold.len() as u64 - tp)
}

pub fn micro_f1_id(preds: &[Prediction], gold: &[AnnotatedUtterance]) -> Result<EvalReport> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pair_up(preds, gold)? {
        let (t, f, n) = count_sets(&p.intents, &g.gold_intents);
        tp += t;
        fp += f;
        fn_ += n;
    }
    Ok(EvalReport::from_counts(Task::Id, tp, fp, fn_))
}

fn predicted_value_set(p: &Prediction) -> BTreeSet<(&str, &str)> {
    p.slot_values
        .iter()
        .flat_map(|(slot, joined)| {
            joined
                .split(VALUE_SEPARATOR)
                .map(normalize_value)
                .filter(|v| !v.is_empty())
                .map(move |v| (slot.as_str(), v))
        })
        .collect()
}

fn gold_value_set(g: &AnnotatedUtterance) -> BTreeSet<(&str, &str)> {
    g.gold_slots
        .iter()
        .map(|a| (a.slot.as_str(), normalize_value(&a.value)))
        .collect()
}

/// Micro-F1 over (utterance, slot, value) triples. A wrong value on an
/// annotated slot is both a false positive and a false negative.
pub fn micro_f1_ve(preds: &[Prediction], gold: &[AnnotatedUtterance]) -> Result<EvalReport> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pair_up(preds, gold)? {
        let (t, f, n) = count_sets(&predicted_value_set(p), &gold_value_set(g));
        tp += t;
        fp += f;
        fn_ += n;
    }
    Ok(EvalReport::from_counts(Task::Ve, tp, fp, fn_))
}

pub fn micro_f1(task: Task, preds: &[Prediction], gold: &[AnnotatedUtterance]) -> Result<EvalReport> {
    match task {
        Task::Id => micro_f1_id(preds, gold),
        Task::Ve => micro_f1_ve(preds, gold),
    }
}

/// Combines per-fold reports: the headline score is the unweighted mean of
/// fold scores, counts are summed.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate zero reports"))?;
    if let Some(other) = reports.iter().find(|r| r.task != first.task) {
        return Err(Error::invalid(format!(
            "cannot aggregate {} and {} reports",
            first.task, other.task
        )));
    }
    let per_fold: Vec<FoldScore> = reports.iter().flat_map(|r| r.per_fold.iter().copied()).collect();
    let mean = per_fold.iter().map(|f| f.micro_f1).sum::<f64>() / per_fold.len() as f64;
    let tp = reports.iter().map(|r| r.tp).sum();
    let fp = reports.iter().map(|r| r.fp).sum();
    let fn_ = reports.iter().map(|r| r.fn_).sum();
    Ok(EvalReport {
        task: first.task,
        micro_f1: mean,
        tp,
        fp,
        fn_,
        per_fold,
        pooled_micro_f1: f1_from_counts(tp, fp, fn_),
        aggregate_rule: MEAN_OF_FOLDS.to_string(),
    })
}
