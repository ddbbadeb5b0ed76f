//! The uniform model interface used by the experiment runners.

use serde::{Deserialize, Serialize};

use nluqa_core::instruction::{InstructionInstance, TaskKind};

use crate::{ModelError, Result};

pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;
pub const DEFAULT_ADAPTER_LEARNING_RATE: f64 = 5e-4;
pub const DEFAULT_REDUCTION_FACTOR: usize = 16;

/// Greedy decoding budget per task kind.
pub fn max_new_tokens(kind: TaskKind) -> usize {
    match kind {
        TaskKind::IdBinary => 16,
        TaskKind::VeExtractive => 32,
        TaskKind::McId | TaskKind::McVe => 128,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(default = "default_reduction_factor")]
    pub reduction_factor: usize,
}

fn default_reduction_factor() -> usize {
    DEFAULT_REDUCTION_FACTOR
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            reduction_factor: DEFAULT_REDUCTION_FACTOR,
        }
    }
}

fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_max_input() -> usize {
    512
}
fn default_max_target() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Unset means 5e-5, or 5e-4 with adapters.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adapter: Option<AdapterConfig>,
    #[serde(default = "default_max_input")]
    pub max_input_length: usize,
    #[serde(default = "default_max_target")]
    pub max_target_length: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: None,
            seed: 0,
            adapter: None,
            max_input_length: default_max_input(),
            max_target_length: default_max_target(),
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn with_adapters(reduction_factor: usize) -> Self {
        Self {
            adapter: Some(AdapterConfig { reduction_factor }),
            ..Self::default()
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(if self.adapter.is_some() {
            DEFAULT_ADAPTER_LEARNING_RATE
        } else {
            DEFAULT_LEARNING_RATE
        })
    }

    /// Copy with the learning rate filled in, as recorded in manifests.
    pub fn resolved(&self) -> Self {
        Self {
            learning_rate: Some(self.learning_rate()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ModelError::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(ModelError::invalid("batch_size must be at least 1"));
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(ModelError::invalid(format!("learning rate {lr} must be positive")));
        }
        if let Some(adapter) = &self.adapter {
            if adapter.reduction_factor == 0 {
                return Err(ModelError::invalid("reduction_factor must be at least 1"));
            }
        }
        if self.max_input_length < 2 || self.max_target_length < 2 {
            return Err(ModelError::invalid("maximum lengths must leave room for the end token"));
        }
        Ok(())
    }
}

/// What happened during a training call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    /// Inputs longer than `max_input_length`, shortened from the left.
    pub truncated_inputs: usize,
    /// Targets longer than `max_target_length`, cut at the end.
    pub truncated_targets: usize,
    pub trainable_parameters: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Seq2seqCheckpoint,
    GoldOracle,
}

pub struct Trained {
    pub backend: Box<dyn Seq2SeqBackend>,
    pub report: TrainReport,
}

/// A text-to-text model. Handles are immutable: training returns a new one.
pub trait Seq2SeqBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Identifier recorded in run manifests.
    fn backend_id(&self) -> String;

    /// One greedy answer per input, in input order.
    fn generate(&self, inputs: &[String], max_new_tokens: usize) -> Result<Vec<String>>;

    /// Answers compiled instances, with the decoding budget of each kind.
    fn answer(&self, instances: &[InstructionInstance]) -> Result<Vec<String>> {
        let mut out = vec![String::new(); instances.len()];
        let mut kinds: Vec<TaskKind> = instances.iter().map(|i| i.task_kind).collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let positions: Vec<usize> = (0..instances.len())
                .filter(|&i| instances[i].task_kind == kind)
                .collect();
            let inputs: Vec<String> = positions.iter().map(|&i| instances[i].input_text.clone()).collect();
            let answers = self.generate(&inputs, max_new_tokens(kind)).map_err(|e| match e {
                ModelError::Generation { index, message } => ModelError::Generation {
                    index: positions[index],
                    message,
                },
                other => other,
            })?;
            for (position, answer) in positions.into_iter().zip(answers) {
                out[position] = answer;
            }
        }
        Ok(out)
    }

    /// Untruncated model input length of `text`, end token included, when
    /// the backend has a tokenizer.
    fn token_count(&self, _text: &str) -> Option<usize> {
        None
    }

    fn is_trainable(&self) -> bool {
        true
    }

    fn train(&self, data: &[InstructionInstance], cfg: &TrainConfig) -> Result<Trained>;
}
