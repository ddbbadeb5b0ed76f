//! CL-SE: a one-hidden-layer multi-label classifier over fixed sentence
//! embeddings, with per-class sigmoid outputs and a decision threshold.

use std::collections::BTreeSet;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nluqa_core::corpus::DomainOntology;

use crate::backend::{DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use crate::layers::linear;
use crate::params::{Init, ParamStore};
use crate::{ModelError, Result};

pub const DEFAULT_HIDDEN_SIZE: usize = 512;
pub const DEFAULT_THRESHOLD: f64 = 0.3;

fn default_hidden() -> usize {
    DEFAULT_HIDDEN_SIZE
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClseConfig {
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ClseConfig {
    fn default() -> Self {
        Self {
            hidden_size: DEFAULT_HIDDEN_SIZE,
            threshold: DEFAULT_THRESHOLD,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

impl ClseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ModelError::invalid(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if self.hidden_size == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::invalid("hidden_size, epochs and batch_size must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(ModelError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

pub struct ClseClassifier {
    intents: Vec<String>,
    input_dim: usize,
    threshold: f64,
    store: ParamStore,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl std::fmt::Debug for ClseClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClseClassifier")
            .field("intents", &self.intents.len())
            .field("input_dim", &self.input_dim)
            .field("threshold", &self.threshold)
            .finish()
    }
}

fn build(store: &mut ParamStore, input_dim: usize, hidden: usize, classes: usize) -> Result<[Tensor; 4]> {
    Ok([
        store.get("hidden.weight", &[hidden, input_dim], Init::Normal((input_dim as f64).powf(-0.5)))?,
        store.get("hidden.bias", &[hidden], Init::Zeros)?,
        store.get("output.weight", &[classes, hidden], Init::Normal((hidden as f64).powf(-0.5)))?,
        store.get("output.bias", &[classes], Init::Zeros)?,
    ])
}

/// Mean binary cross-entropy on logits, computed in the stable form
/// `max(x, 0) - x t + ln(1 + e^{-|x|})`.
fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let positive = logits.relu()?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((positive - (logits * targets)?)? + soft)?.mean_all()?)
}

fn matrix(rows: &[&Vec<f32>], width: usize, device: &Device) -> Result<Tensor> {
    let flat: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (rows.len(), width), device)?)
}

pub fn train_clse(
    embeddings: &[Vec<f32>],
    gold: &[BTreeSet<String>],
    ontology: &DomainOntology,
    cfg: &ClseConfig,
) -> Result<ClseClassifier> {
    cfg.validate()?;
    if embeddings.is_empty() || embeddings.len() != gold.len() {
        return Err(ModelError::invalid(format!(
            "{} embeddings for {} label sets",
            embeddings.len(),
            gold.len()
        )));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(ModelError::invalid("embeddings differ in dimensionality"));
    }
    let intents: Vec<String> = ontology.intents.iter().map(|c| c.name.clone()).collect();
    if intents.is_empty() {
        return Err(ModelError::invalid("ontology has no intents"));
    }
    let targets: Vec<Vec<f32>> = gold
        .iter()
        .map(|set| intents.iter().map(|name| f32::from(u8::from(set.contains(name)))).collect())
        .collect();

    let device = Device::Cpu;
    let mut store = ParamStore::fresh(cfg.seed, &device);
    let [w1, b1, w2, b2] = build(&mut store, dim, cfg.hidden_size, intents.len())?;
    let params = ParamsAdamW {
        lr: cfg.learning_rate,
        weight_decay: 0.0,
        ..ParamsAdamW::default()
    };
    let mut optimizer = AdamW::new(store.trainable_vars(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = matrix(&batch.iter().map(|&i| &embeddings[i]).collect::<Vec<_>>(), dim, &device)?;
            let t = matrix(&batch.iter().map(|&i| &targets[i]).collect::<Vec<_>>(), intents.len(), &device)?;
            let hidden = linear(&x, &w1, Some(&b1))?.tanh()?;
            let logits = linear(&hidden, &w2, Some(&b2))?;
            optimizer.backward_step(&bce_with_logits(&logits, &t)?)?;
        }
    }
    Ok(ClseClassifier {
        intents,
        input_dim: dim,
        threshold: cfg.threshold,
        store,
        w1,
        b1,
        w2,
        b2,
    })
}

impl ClseClassifier {
    pub fn output_dim(&self) -> usize {
        self.intents.len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    /// Sigmoid output per intent, in ontology order.
    pub fn probabilities(&self, embedding: &[f32]) -> Result<Vec<f64>> {
        if embedding.len() != self.input_dim {
            return Err(ModelError::invalid(format!(
                "embedding has {} dimensions, classifier expects {}",
                embedding.len(),
                self.input_dim
            )));
        }
        let x = Tensor::from_slice(embedding, (1, self.input_dim), &Device::Cpu)?;
        let hidden = linear(&x, &self.w1, Some(&self.b1))?.tanh()?;
        let probs = candle_nn::ops::sigmoid(&linear(&hidden, &self.w2, Some(&self.b2))?)?;
        Ok(probs.squeeze(0)?.to_dtype(DType::F64)?.to_vec1()?)
    }

    /// Intents whose output exceeds `threshold`.
    pub fn predict(&self, embedding: &[f32], threshold: f64) -> Result<BTreeSet<String>> {
        Ok(self
            .probabilities(embedding)?
            .into_iter()
            .zip(&self.intents)
            .filter(|(p, _)| *p > threshold)
            .map(|(_, name)| name.clone())
            .collect())
    }

    /// Prediction at the configured threshold.
    pub fn predict_default(&self, embedding: &[f32]) -> Result<BTreeSet<String>> {
        self.predict(embedding, self.threshold)
    }

    /// Writes `clse.safetensors` and `clse.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.store.save(&dir.join(WEIGHTS_FILE))?;
        let meta = ClseMeta {
            intents: self.intents.clone(),
            input_dim: self.input_dim,
            hidden_size: self.w1.dim(0)?,
            threshold: self.threshold,
        };
        std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| ModelError::load(&meta_path, e))?;
        let meta: ClseMeta = serde_json::from_str(&text).map_err(|e| ModelError::load(&meta_path, e))?;
        let mut store = ParamStore::from_safetensors(&[dir.join(WEIGHTS_FILE)], 0, &Device::Cpu)?;
        let [w1, b1, w2, b2] = build(&mut store, meta.input_dim, meta.hidden_size, meta.intents.len())?;
        Ok(Self {
            intents: meta.intents,
            input_dim: meta.input_dim,
            threshold: meta.threshold,
            store,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

const WEIGHTS_FILE: &str = "clse.safetensors";
const META_FILE: &str = "clse.json";

#[derive(Serialize, Deserialize)]
struct ClseMeta {
    intents: Vec<String>,
    input_dim: usize,
    hidden_size: usize,
    threshold: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nluqa_core::corpus::IntentClass;

    fn ontology(k: usize) -> DomainOntology {
        DomainOntology::new(
            "d",
            (0..k).map(|i| IntentClass::new(format!("i{i}"), format!("intend {i}"))).collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn memorizes_a_single_point() {
        let cfg = ClseConfig {
            hidden_size: 16,
            epochs: 300,
            learning_rate: 1e-2,
            ..ClseConfig::default()
        };
        let gold = vec![BTreeSet::from(["i1".to_string()])];
        let clf = train_clse(&[vec![0.6, 0.8]], &gold, &ontology(3), &cfg).unwrap();
        assert_eq!(clf.output_dim(), 3);
        assert_eq!(clf.predict_default(&[0.6, 0.8]).unwrap(), gold[0]);
    }

    #[test]
    fn threshold_edges() {
        let cfg = ClseConfig {
            hidden_size: 4,
            epochs: 1,
            ..ClseConfig::default()
        };
        let clf = train_clse(&[vec![1.0, 0.0]], &[BTreeSet::new()], &ontology(4), &cfg).unwrap();
        assert_eq!(clf.predict(&[1.0, 0.0], 0.0).unwrap().len(), 4);
        assert!(clf.predict(&[1.0, 0.0], 1.0).unwrap().is_empty());
        assert!(clf.predict(&[1.0], 0.3).is_err());
        assert_eq!(clf.threshold(), 0.3);

        let dir = tempfile::tempdir().unwrap();
        clf.save(dir.path()).unwrap();
        let back = ClseClassifier::load(dir.path()).unwrap();
        assert_eq!(back.intents(), clf.intents());
        assert_eq!(back.probabilities(&[1.0, 0.0]).unwrap(), clf.probabilities(&[1.0, 0.0]).unwrap());
    }

    #[test]
    fn argument_errors() {
        let cfg = ClseConfig::default();
        let o = ontology(2);
        assert!(train_clse(&[], &[], &o, &cfg).is_err());
        assert!(train_clse(&[vec![1.0], vec![1.0, 2.0]], &[BTreeSet::new(), BTreeSet::new()], &o, &cfg).is_err());
        let bad = ClseConfig { threshold: 1.5, ..cfg };
        assert!(train_clse(&[vec![1.0]], &[BTreeSet::new()], &o, &bad).is_err());
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let cfg = ClseConfig {
            hidden_size: 8,
            epochs: 3,
            batch_size: 2,
            seed: 5,
            ..ClseConfig::default()
        };
        let x = vec![vec![0.1, 0.9], vec![0.7, 0.3], vec![0.5, 0.5]];
        let y = vec![
            BTreeSet::from(["i0".to_string()]),
            BTreeSet::new(),
            BTreeSet::from(["i1".to_string()]),
        ];
        let a = train_clse(&x, &y, &ontology(2), &cfg).unwrap();
        let b = train_clse(&x, &y, &ontology(2), &cfg).unwrap();
        assert_eq!(a.probabilities(&[0.2, 0.8]).unwrap(), b.probabilities(&[0.2, 0.8]).unwrap());
    }
}
