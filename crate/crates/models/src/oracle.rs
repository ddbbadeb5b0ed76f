//! Test double that answers every instruction from the gold annotation.

use std::collections::HashMap;
use std::sync::RwLock;

use nluqa_core::corpus::{AnnotatedUtterance, DomainCorpus, DomainOntology};
use nluqa_core::instruction::{id_target, mc_id_target, mc_ve_target, ve_target, InstructionInstance, TaskKind};

use crate::backend::{BackendKind, Seq2SeqBackend, TrainConfig, Trained};
use crate::{ModelError, Result};

pub const GOLD_ORACLE_ID: &str = "gold-oracle";

/// Answers instructions about utterances of the attached corpora with their
/// gold labels. Lookup is by the instance's utterance id and class; plain
/// text inputs are answered only after [`GoldOracle::register`].
pub struct GoldOracle {
    ontologies: Vec<DomainOntology>,
    utterances: HashMap<String, (AnnotatedUtterance, usize)>,
    by_input: RwLock<HashMap<String, String>>,
}

impl GoldOracle {
    pub fn new<'a, I>(corpora: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DomainCorpus>,
    {
        let mut ontologies = Vec::new();
        let mut utterances = HashMap::new();
        for corpus in corpora {
            let index = ontologies.len();
            ontologies.push(corpus.ontology.clone());
            for u in &corpus.utterances {
                if utterances.insert(u.id.clone(), (u.clone(), index)).is_some() {
                    return Err(ModelError::invalid(format!("utterance id {} attached twice", u.id)));
                }
            }
        }
        if utterances.is_empty() {
            return Err(ModelError::invalid("gold oracle needs at least one utterance"));
        }
        Ok(Self {
            ontologies,
            utterances,
            by_input: RwLock::new(HashMap::new()),
        })
    }

    /// The gold answer for one compiled instance.
    pub fn target_for(&self, instance: &InstructionInstance) -> Result<String> {
        let (utterance, ontology) = self.utterances.get(&instance.utterance_id).ok_or_else(|| {
            ModelError::invalid(format!("utterance {} is not attached to the oracle", instance.utterance_id))
        })?;
        let ontology = &self.ontologies[*ontology];
        let class = || {
            instance
                .class_name
                .as_deref()
                .ok_or_else(|| ModelError::invalid(format!("instance for {} has no class", utterance.id)))
        };
        Ok(match instance.task_kind {
            TaskKind::IdBinary => id_target(utterance, class()?).to_string(),
            TaskKind::VeExtractive => ve_target(utterance, class()?),
            TaskKind::McId => mc_id_target(utterance, ontology),
            TaskKind::McVe => mc_ve_target(utterance, ontology),
        })
    }

    /// Makes the rendered inputs of `instances` answerable through
    /// [`Seq2SeqBackend::generate`].
    pub fn register(&self, instances: &[InstructionInstance]) -> Result<()> {
        let mut map = self.by_input.write().expect("oracle lock");
        for instance in instances {
            let target = self.target_for(instance)?;
            if let Some(previous) = map.insert(instance.input_text.clone(), target.clone()) {
                if previous != target {
                    return Err(ModelError::invalid(format!(
                        "input `{}` has conflicting gold answers",
                        instance.input_text
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Seq2SeqBackend for GoldOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::GoldOracle
    }

    fn backend_id(&self) -> String {
        GOLD_ORACLE_ID.to_string()
    }

    fn generate(&self, inputs: &[String], _max_new_tokens: usize) -> Result<Vec<String>> {
        let map = self.by_input.read().expect("oracle lock");
        inputs
            .iter()
            .enumerate()
            .map(|(index, input)| {
                map.get(input).cloned().ok_or_else(|| ModelError::Generation {
                    index,
                    message: "input was never registered with the gold oracle".into(),
                })
            })
            .collect()
    }

    fn answer(&self, instances: &[InstructionInstance]) -> Result<Vec<String>> {
        instances
            .iter()
            .enumerate()
            .map(|(index, i)| {
                self.target_for(i).map_err(|e| ModelError::Generation {
                    index,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    fn is_trainable(&self) -> bool {
        false
    }

    fn train(&self, _data: &[InstructionInstance], _cfg: &TrainConfig) -> Result<Trained> {
        Err(ModelError::NotTrainable(GOLD_ORACLE_ID.into()))
    }
}
