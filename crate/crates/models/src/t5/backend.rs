use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nluqa_core::instruction::InstructionInstance;

use super::config::T5Config;
use super::model::T5Model;
use crate::backend::{BackendKind, Seq2SeqBackend, TrainConfig, TrainReport, Trained};
use crate::layers::Ctx;
use crate::params::{ParamStore, Trainable};
use crate::tokenizer::TextTokenizer;
use crate::{ModelError, Result};

const DEFAULT_GENERATION_BATCH: usize = 16;
const DEFAULT_MAX_INPUT: usize = 512;

/// A T5-family checkpoint together with its tokenizer.
pub struct T5Backend {
    id: String,
    cfg: T5Config,
    tokenizer: TextTokenizer,
    store: ParamStore,
    model: T5Model,
    adapter: Option<usize>,
    generation_batch: usize,
    max_input_length: usize,
}

/// Keeps the last `max_len - 1` tokens and appends `eos`. Instructions end
/// with the question, so the context side is what gets dropped.
pub fn truncate_left(ids: &[u32], max_len: usize, eos: u32) -> (Vec<u32>, bool) {
    let keep = max_len.saturating_sub(1);
    let truncated = ids.len() > keep;
    let mut out = ids[ids.len().saturating_sub(keep)..].to_vec();
    out.push(eos);
    (out, truncated)
}

/// Keeps the first `max_len - 1` tokens and appends `eos`.
pub fn truncate_right(ids: &[u32], max_len: usize, eos: u32) -> (Vec<u32>, bool) {
    let keep = max_len.saturating_sub(1);
    let truncated = ids.len() > keep;
    let mut out = ids[..ids.len().min(keep)].to_vec();
    out.push(eos);
    (out, truncated)
}

/// Right-pads rows to the longest one, returning ids and a 0/1 mask.
fn pad_batch(rows: &[Vec<u32>], pad: u32, device: &Device) -> Result<(Tensor, Tensor)> {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let mut ids = Vec::with_capacity(rows.len() * width);
    let mut mask = Vec::with_capacity(rows.len() * width);
    for row in rows {
        ids.extend_from_slice(row);
        ids.extend(std::iter::repeat_n(pad, width - row.len()));
        mask.extend(std::iter::repeat_n(1u32, row.len()));
        mask.extend(std::iter::repeat_n(0u32, width - row.len()));
    }
    Ok((
        Tensor::from_vec(ids, (rows.len(), width), device)?,
        Tensor::from_vec(mask, (rows.len(), width), device)?,
    ))
}

impl T5Backend {
    pub fn new(
        id: impl Into<String>,
        cfg: T5Config,
        tokenizer: TextTokenizer,
        mut store: ParamStore,
        adapter: Option<usize>,
    ) -> Result<Self> {
        if tokenizer.vocab_size() > cfg.vocab_size {
            return Err(ModelError::Config(format!(
                "tokenizer has {} tokens but the model only {}",
                tokenizer.vocab_size(),
                cfg.vocab_size
            )));
        }
        let model = T5Model::new(&cfg, &mut store, adapter)?;
        Ok(Self {
            id: id.into(),
            cfg,
            tokenizer,
            store,
            model,
            adapter,
            generation_batch: DEFAULT_GENERATION_BATCH,
            max_input_length: DEFAULT_MAX_INPUT,
        })
    }

    /// Randomly initialized model, seeded.
    pub fn random(id: impl Into<String>, cfg: T5Config, tokenizer: TextTokenizer, seed: u64) -> Result<Self> {
        let store = ParamStore::fresh(seed, &Device::Cpu);
        Self::new(id, cfg, tokenizer, store, None)
    }

    /// Loads `config.json`, `tokenizer.json` and every `*.safetensors` file
    /// in `dir`.
    pub fn load(id: impl Into<String>, dir: &Path) -> Result<Self> {
        let cfg = T5Config::from_file(&dir.join("config.json"))?;
        let tokenizer = TextTokenizer::from_file(&dir.join("tokenizer.json"))?;
        let weights = safetensors_files(dir)?;
        let store = ParamStore::from_safetensors(&weights, 0, &Device::Cpu)?;
        Self::new(id, cfg, tokenizer, store, None)
    }

    pub fn with_generation_batch(mut self, size: usize) -> Self {
        self.generation_batch = size.max(1);
        self
    }

    pub fn with_max_input_length(mut self, len: usize) -> Self {
        self.max_input_length = len.max(2);
        self
    }

    pub fn config(&self) -> &T5Config {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &TextTokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn adapter(&self) -> Option<usize> {
        self.adapter
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    fn encode_input(&self, text: &str, max_len: usize) -> Result<(Vec<u32>, bool)> {
        Ok(truncate_left(&self.tokenizer.encode(text)?, max_len, self.cfg.eos_token_id))
    }

    fn generate_batch(&self, inputs: &[String], max_new_tokens: usize, offset: usize) -> Result<Vec<String>> {
        let device = self.store.device();
        let mut rows = Vec::with_capacity(inputs.len());
        for (i, text) in inputs.iter().enumerate() {
            let (ids, _) = self.encode_input(text, self.max_input_length).map_err(|e| ModelError::Generation {
                index: offset + i,
                message: e.to_string(),
            })?;
            rows.push(ids);
        }
        let batch_error = |e: ModelError| ModelError::Generation {
            index: offset,
            message: format!("batch of {} starting here: {e}", inputs.len()),
        };
        let (ids, mask) = pad_batch(&rows, self.cfg.pad_token_id, device).map_err(batch_error)?;
        let ctx = Ctx::eval();
        let encoded = self.model.encode(&ids, &mask, &ctx).map_err(batch_error)?;

        let n = inputs.len();
        let mut prefixes: Vec<Vec<u32>> = vec![vec![self.cfg.decoder_start_token_id]; n];
        let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        for _ in 0..max_new_tokens {
            let (dec, _) = pad_batch(&prefixes, self.cfg.pad_token_id, device).map_err(batch_error)?;
            let logits = self.model.decode(&dec, &encoded, &mask, &ctx).map_err(batch_error)?;
            let last = logits.dim(1)? - 1;
            let next: Vec<u32> = logits
                .narrow(1, last, 1)?
                .squeeze(1)?
                .argmax(candle_core::D::Minus1)?
                .to_vec1()?;
            for (i, token) in next.into_iter().enumerate() {
                if done[i] {
                    prefixes[i].push(self.cfg.pad_token_id);
                    continue;
                }
                if token == self.cfg.eos_token_id {
                    done[i] = true;
                } else {
                    outputs[i].push(token);
                }
                prefixes[i].push(token);
            }
            if done.iter().all(|d| *d) {
                break;
            }
        }
        outputs
            .iter()
            .enumerate()
            .map(|(i, ids)| {
                self.tokenizer.decode(ids).map_err(|e| ModelError::Generation {
                    index: offset + i,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

fn safetensors_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ModelError::load(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "safetensors"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ModelError::load(dir, "no .safetensors files"));
    }
    Ok(files)
}

struct Example {
    input: Vec<u32>,
    target: Vec<u32>,
}

impl Seq2SeqBackend for T5Backend {
    fn kind(&self) -> BackendKind {
        BackendKind::Seq2seqCheckpoint
    }

    fn backend_id(&self) -> String {
        self.id.clone()
    }

    fn generate(&self, inputs: &[String], max_new_tokens: usize) -> Result<Vec<String>> {
        if inputs.is_empty() {
            return Err(ModelError::invalid("no inputs to generate from"));
        }
        let mut out = Vec::with_capacity(inputs.len());
        for (chunk_index, chunk) in inputs.chunks(self.generation_batch).enumerate() {
            out.extend(self.generate_batch(chunk, max_new_tokens, chunk_index * self.generation_batch)?);
        }
        Ok(out)
    }

    fn token_count(&self, text: &str) -> Option<usize> {
        self.tokenizer.encode(text).ok().map(|ids| ids.len() + 1)
    }

    fn train(&self, data: &[InstructionInstance], cfg: &TrainConfig) -> Result<Trained> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(ModelError::invalid("no training instances"));
        }
        let adapter = match (self.adapter, cfg.adapter.map(|a| a.reduction_factor)) {
            (Some(have), Some(want)) if have != want => {
                return Err(ModelError::Config(format!(
                    "handle has adapters with reduction factor {have}, config asks for {want}"
                )))
            }
            (have, want) => want.or(have),
        };

        let mut store = self.store.deep_copy()?;
        store.reseed(cfg.seed);
        store.set_trainable(if adapter.is_some() {
            Trainable::AdaptersOnly
        } else {
            Trainable::All
        });
        let model = T5Model::new(&self.cfg, &mut store, adapter)?;
        let mut report = TrainReport {
            trainable_parameters: store.trainable_parameter_count(),
            learning_rate: cfg.learning_rate(),
            ..TrainReport::default()
        };

        let eos = self.cfg.eos_token_id;
        let mut examples = Vec::with_capacity(data.len());
        for instance in data {
            let (input, cut_input) = self.encode_input(&instance.input_text, cfg.max_input_length)?;
            let (target, cut_target) =
                truncate_right(&self.tokenizer.encode(&instance.target_text)?, cfg.max_target_length, eos);
            report.truncated_inputs += usize::from(cut_input);
            report.truncated_targets += usize::from(cut_target);
            examples.push(Example { input, target });
        }

        let params = ParamsAdamW {
            lr: cfg.learning_rate(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        };
        let mut optimizer = AdamW::new(store.trainable_vars(), params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let device = store.device().clone();
        let pad = self.cfg.pad_token_id;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(cfg.batch_size) {
                let inputs: Vec<Vec<u32>> = batch.iter().map(|&i| examples[i].input.clone()).collect();
                let labels: Vec<Vec<u32>> = batch.iter().map(|&i| examples[i].target.clone()).collect();
                let shifted: Vec<Vec<u32>> = labels
                    .iter()
                    .map(|l| {
                        std::iter::once(self.cfg.decoder_start_token_id)
                            .chain(l[..l.len() - 1].iter().copied())
                            .collect()
                    })
                    .collect();
                let (input_ids, mask) = pad_batch(&inputs, pad, &device)?;
                let (label_ids, label_mask) = pad_batch(&labels, pad, &device)?;
                let (decoder_ids, _) = pad_batch(&shifted, pad, &device)?;
                let ctx = Ctx::train(self.cfg.dropout_rate as f32, cfg.seed.wrapping_add(report.steps as u64));
                let loss = model.loss(&input_ids, &mask, &decoder_ids, &label_ids, &label_mask, &ctx)?;
                optimizer.backward_step(&loss)?;
                epoch_loss += loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                batches += 1;
                report.steps += 1;
            }
            report.epoch_losses.push(epoch_loss / batches as f64);
        }

        let backend = T5Backend {
            id: format!("{}+tuned", self.id),
            cfg: self.cfg.clone(),
            tokenizer: self.tokenizer.clone(),
            store,
            model,
            adapter,
            generation_batch: self.generation_batch,
            max_input_length: self.max_input_length,
        };
        Ok(Trained {
            backend: Box::new(backend),
            report,
        })
    }
}
