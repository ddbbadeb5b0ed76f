//! Transformer sentence encoders (BERT and MPNet layouts) with CLS or mean
//! pooling, an optional tanh projection, and unit-norm output.

use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use nluqa_core::embedding::{l2_normalize, SentenceEncoder};

use crate::layers::{layer_norm, linear, padding_bias, softmax_last};
use crate::params::{Init, ParamStore};
use crate::position::relative_bias;
use crate::tokenizer::TextTokenizer;
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderFlavor {
    Bert,
    Mpnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Cls,
    Mean,
}

fn default_eps() -> f64 {
    1e-12
}
fn default_type_vocab() -> usize {
    2
}
fn default_buckets() -> usize {
    32
}

/// Hyperparameters as found in a checkpoint's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub model_type: String,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_buckets")]
    pub relative_attention_num_buckets: usize,
    #[serde(default)]
    pub pad_token_id: u32,
}

impl EncoderConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::load(path, e))?;
        serde_json::from_str(&text).map_err(|e| ModelError::load(path, e))
    }

    pub fn flavor(&self) -> Result<EncoderFlavor> {
        match self.model_type.as_str() {
            "bert" => Ok(EncoderFlavor::Bert),
            "mpnet" => Ok(EncoderFlavor::Mpnet),
            other => Err(ModelError::Config(format!("unsupported encoder model_type `{other}`"))),
        }
    }

    pub fn tiny(model_type: &str, vocab_size: usize) -> Self {
        Self {
            model_type: model_type.to_string(),
            vocab_size,
            hidden_size: 16,
            num_hidden_layers: 2,
            num_attention_heads: 2,
            intermediate_size: 32,
            max_position_embeddings: 64,
            type_vocab_size: if model_type == "bert" { 2 } else { 1 },
            layer_norm_eps: 1e-12,
            relative_attention_num_buckets: 8,
            pad_token_id: if model_type == "mpnet" { 1 } else { 0 },
        }
    }
}

struct Norm {
    weight: Tensor,
    bias: Tensor,
}

impl Norm {
    fn new(store: &mut ParamStore, prefix: &str, h: usize) -> Result<Self> {
        Ok(Self {
            weight: store.get(&format!("{prefix}.weight"), &[h], Init::Ones)?,
            bias: store.get(&format!("{prefix}.bias"), &[h], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        layer_norm(x, &self.weight, &self.bias, eps)
    }
}

struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    fn new(store: &mut ParamStore, prefix: &str, out: usize, inp: usize) -> Result<Self> {
        Ok(Self {
            weight: store.get(&format!("{prefix}.weight"), &[out, inp], Init::Normal(0.02))?,
            bias: store.get(&format!("{prefix}.bias"), &[out], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, Some(&self.bias))
    }
}

struct Layer {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    attn_norm: Norm,
    intermediate: Dense,
    output: Dense,
    out_norm: Norm,
}

impl Layer {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, flavor: EncoderFlavor) -> Result<Self> {
        let h = cfg.hidden_size;
        let (q, k, v, o, attn_norm) = match flavor {
            EncoderFlavor::Bert => (
                Dense::new(store, &format!("{prefix}.attention.self.query"), h, h)?,
                Dense::new(store, &format!("{prefix}.attention.self.key"), h, h)?,
                Dense::new(store, &format!("{prefix}.attention.self.value"), h, h)?,
                Dense::new(store, &format!("{prefix}.attention.output.dense"), h, h)?,
                Norm::new(store, &format!("{prefix}.attention.output.LayerNorm"), h)?,
            ),
            EncoderFlavor::Mpnet => (
                Dense::new(store, &format!("{prefix}.attention.attn.q"), h, h)?,
                Dense::new(store, &format!("{prefix}.attention.attn.k"), h, h)?,
                Dense::new(store, &format!("{prefix}.attention.attn.v"), h, h)?,
                Dense::new(store, &format!("{prefix}.attention.attn.o"), h, h)?,
                Norm::new(store, &format!("{prefix}.attention.LayerNorm"), h)?,
            ),
        };
        Ok(Self {
            q,
            k,
            v,
            o,
            attn_norm,
            intermediate: Dense::new(store, &format!("{prefix}.intermediate.dense"), cfg.intermediate_size, h)?,
            output: Dense::new(store, &format!("{prefix}.output.dense"), h, cfg.intermediate_size)?,
            out_norm: Norm::new(store, &format!("{prefix}.output.LayerNorm"), h)?,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor, heads: usize, eps: f64) -> Result<Tensor> {
        let (b, len, h) = x.dims3()?;
        let head_dim = h / heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, len, heads, head_dim))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (head_dim as f64).sqrt())?.broadcast_add(bias)?;
        let context = softmax_last(&scores)?
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, len, h))?;
        let attended = self.attn_norm.forward(&(self.o.forward(&context)? + x)?, eps)?;
        let inner = self.intermediate.forward(&attended)?.gelu_erf()?;
        self.out_norm.forward(&(self.output.forward(&inner)? + attended)?, eps)
    }
}

pub struct TransformerEncoder {
    id: String,
    cfg: EncoderConfig,
    flavor: EncoderFlavor,
    pooling: Pooling,
    tokenizer: TextTokenizer,
    word: Tensor,
    position: Tensor,
    token_type: Option<Tensor>,
    embed_norm: Norm,
    layers: Vec<Layer>,
    relative: Option<Tensor>,
    projection: Option<Dense>,
    max_length: usize,
    batch_size: usize,
}

impl TransformerEncoder {
    pub fn new(
        id: impl Into<String>,
        cfg: EncoderConfig,
        tokenizer: TextTokenizer,
        store: &mut ParamStore,
        pooling: Pooling,
        projection_dim: Option<usize>,
    ) -> Result<Self> {
        let flavor = cfg.flavor()?;
        let h = cfg.hidden_size;
        if !h.is_multiple_of(cfg.num_attention_heads) {
            return Err(ModelError::Config("hidden size not divisible by head count".into()));
        }
        let root = match flavor {
            EncoderFlavor::Bert if store.contains("bert.embeddings.word_embeddings.weight") => "bert.",
            EncoderFlavor::Mpnet if store.contains("mpnet.embeddings.word_embeddings.weight") => "mpnet.",
            _ => "",
        };
        let word = store.get(&format!("{root}embeddings.word_embeddings.weight"), &[cfg.vocab_size, h], Init::Normal(0.02))?;
        let position = store.get(
            &format!("{root}embeddings.position_embeddings.weight"),
            &[cfg.max_position_embeddings, h],
            Init::Normal(0.02),
        )?;
        let token_type = match flavor {
            EncoderFlavor::Bert => Some(store.get(
                &format!("{root}embeddings.token_type_embeddings.weight"),
                &[cfg.type_vocab_size, h],
                Init::Normal(0.02),
            )?),
            EncoderFlavor::Mpnet => None,
        };
        let embed_norm = Norm::new(store, &format!("{root}embeddings.LayerNorm"), h)?;
        let layers = (0..cfg.num_hidden_layers)
            .map(|i| Layer::new(store, &format!("{root}encoder.layer.{i}"), &cfg, flavor))
            .collect::<Result<Vec<_>>>()?;
        let relative = match flavor {
            EncoderFlavor::Mpnet => Some(store.get(
                &format!("{root}encoder.relative_attention_bias.weight"),
                &[cfg.relative_attention_num_buckets, cfg.num_attention_heads],
                Init::Normal(0.02),
            )?),
            EncoderFlavor::Bert => None,
        };
        let projection = projection_dim
            .map(|out| Dense::new(store, "projection.linear", out, h))
            .transpose()?;
        let max_length = match flavor {
            EncoderFlavor::Bert => cfg.max_position_embeddings,
            EncoderFlavor::Mpnet => cfg.max_position_embeddings - cfg.pad_token_id as usize - 1,
        };
        Ok(Self {
            id: id.into(),
            cfg,
            flavor,
            pooling,
            tokenizer,
            word,
            position,
            token_type,
            embed_norm,
            layers,
            relative,
            projection,
            max_length,
            batch_size: 32,
        })
    }

    /// Loads a checkpoint directory: `config.json`, `tokenizer.json`, the
    /// weights, and optionally a projection stored as `linear.weight` /
    /// `linear.bias` in `projection`.
    pub fn load(id: impl Into<String>, dir: &Path, pooling: Pooling, projection: Option<&Path>) -> Result<Self> {
        let cfg = EncoderConfig::from_file(&dir.join("config.json"))?;
        let tokenizer = TextTokenizer::from_file(&dir.join("tokenizer.json"))?;
        let weights = dir.join("model.safetensors");
        let mut tensors = candle_core::safetensors::load(&weights, &Device::Cpu).map_err(|e| ModelError::load(&weights, e))?;
        let mut projection_dim = None;
        if let Some(path) = projection {
            let extra = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| ModelError::load(path, e))?;
            for (name, tensor) in extra {
                if name == "linear.weight" {
                    projection_dim = Some(tensor.dim(0)?);
                }
                tensors.insert(format!("projection.{name}"), tensor);
            }
            if projection_dim.is_none() {
                return Err(ModelError::load(path, "no linear.weight in projection file"));
            }
        }
        let mut store = ParamStore::from_tensors(tensors, 0, &Device::Cpu)?;
        Self::new(id, cfg, tokenizer, &mut store, pooling, projection_dim)
    }

    pub fn with_max_length(mut self, len: usize) -> Self {
        self.max_length = len.clamp(2, self.max_length);
        self
    }

    fn encode_ids(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = self.tokenizer.encode_with_specials(text)?;
        if ids.len() > self.max_length {
            // keep the closing special token
            let last = *ids.last().expect("non-empty");
            ids.truncate(self.max_length - 1);
            ids.push(last);
        }
        Ok(ids)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let device = self.word.device();
        let rows = texts.iter().map(|t| self.encode_ids(t)).collect::<Result<Vec<_>>>()?;
        let width = rows.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let pad = self.cfg.pad_token_id;
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        let mut positions = Vec::new();
        for row in &rows {
            for p in 0..width {
                let real = p < row.len();
                ids.push(if real { row[p] } else { pad });
                mask.push(u32::from(real));
                positions.push(match self.flavor {
                    EncoderFlavor::Bert => p as u32,
                    EncoderFlavor::Mpnet if real => pad + 1 + p as u32,
                    EncoderFlavor::Mpnet => pad,
                });
            }
        }
        let b = rows.len();
        let ids = Tensor::from_vec(ids, (b, width), device)?;
        let mask = Tensor::from_vec(mask, (b, width), device)?;
        let positions = Tensor::from_vec(positions, b * width, device)?;
        let h = self.cfg.hidden_size;
        let mut x = self
            .word
            .embedding(&ids.flatten_all()?)?
            .add(&self.position.embedding(&positions)?)?;
        if let Some(token_type) = &self.token_type {
            x = x.broadcast_add(&token_type.get(0)?)?;
        }
        let mut x = self.embed_norm.forward(&x.reshape((b, width, h))?, self.cfg.layer_norm_eps)?;

        let mut bias = padding_bias(&mask)?;
        if let Some(table) = &self.relative {
            bias = relative_bias(table, width, width, true, 128)?.broadcast_add(&bias)?;
        }
        for layer in &self.layers {
            x = layer.forward(&x, &bias, self.cfg.num_attention_heads, self.cfg.layer_norm_eps)?;
        }
        let pooled = match self.pooling {
            Pooling::Cls => x.narrow(1, 0, 1)?.squeeze(1)?,
            Pooling::Mean => {
                let m = mask.to_dtype(DType::F32)?.unsqueeze(D::Minus1)?;
                x.broadcast_mul(&m)?.sum(1)?.broadcast_div(&m.sum(1)?)?
            }
        };
        let pooled = match &self.projection {
            Some(dense) => dense.forward(&pooled)?.tanh()?,
            None => pooled,
        };
        let mut out: Vec<Vec<f32>> = pooled.to_vec2()?;
        out.iter_mut().for_each(|v| l2_normalize(v));
        Ok(out)
    }

    fn dimension_inner(&self) -> usize {
        self.projection
            .as_ref()
            .map(|p| p.bias.dim(0).unwrap_or(self.cfg.hidden_size))
            .unwrap_or(self.cfg.hidden_size)
    }
}

impl SentenceEncoder for TransformerEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension_inner()
    }

    fn embed(&self, texts: &[String]) -> nluqa_core::Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(
                self.embed_batch(chunk)
                    .map_err(|e| nluqa_core::Error::Encoder(format!("{}: {e}", self.id)))?,
            );
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokenizer() -> TextTokenizer {
        TextTokenizer::word_level(&["book", "a", "room", "cancel", "my", "card", "hello"]).unwrap()
    }

    #[test]
    fn random_encoders_produce_unit_vectors() {
        for flavor in ["bert", "mpnet"] {
            for pooling in [Pooling::Cls, Pooling::Mean] {
                let mut store = ParamStore::fresh(4, &Device::Cpu);
                let enc = TransformerEncoder::new(
                    flavor,
                    EncoderConfig::tiny(flavor, 20),
                    tokenizer(),
                    &mut store,
                    pooling,
                    Some(8),
                )
                .unwrap();
                let texts: Vec<String> = ["book a room", "book a room", "cancel my card now please"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                let v = enc.embed(&texts).unwrap();
                assert_eq!(enc.dimension(), 8);
                for x in &v {
                    assert_eq!(x.len(), 8);
                    let norm: f32 = x.iter().map(|a| a * a).sum::<f32>().sqrt();
                    assert!((norm - 1.0).abs() < 1e-5);
                }
                for (a, b) in v[0].iter().zip(&v[1]) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn batching_does_not_change_vectors() {
        let mut store = ParamStore::fresh(1, &Device::Cpu);
        let enc = TransformerEncoder::new("m", EncoderConfig::tiny("mpnet", 20), tokenizer(), &mut store, Pooling::Mean, None)
            .unwrap();
        let alone = enc.embed(&["hello".to_string()]).unwrap();
        let together = enc.embed(&["hello".to_string(), "book a room my card".to_string()]).unwrap();
        for (a, b) in alone[0].iter().zip(&together[0]) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
