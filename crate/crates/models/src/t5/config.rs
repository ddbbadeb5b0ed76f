use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedForward {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "gated-gelu")]
    GatedGelu,
}

fn default_max_distance() -> usize {
    128
}
fn default_true() -> bool {
    true
}
fn default_eos() -> u32 {
    1
}
fn default_eps() -> f64 {
    1e-6
}
fn default_dropout() -> f64 {
    0.1
}
fn default_ff() -> FeedForward {
    FeedForward::Relu
}

/// Encoder-decoder hyperparameters, read from a checkpoint's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T5Config {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_kv: usize,
    pub d_ff: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub num_decoder_layers: Option<usize>,
    pub num_heads: usize,
    pub relative_attention_num_buckets: usize,
    #[serde(default = "default_max_distance")]
    pub relative_attention_max_distance: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_eps")]
    pub layer_norm_epsilon: f64,
    #[serde(default = "default_ff")]
    pub feed_forward_proj: FeedForward,
    #[serde(default = "default_true")]
    pub tie_word_embeddings: bool,
    #[serde(default)]
    pub pad_token_id: u32,
    #[serde(default = "default_eos")]
    pub eos_token_id: u32,
    #[serde(default)]
    pub decoder_start_token_id: u32,
}

impl T5Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::load(path, e))?;
        serde_json::from_str(&text).map_err(|e| ModelError::load(path, e))
    }

    pub fn decoder_layers(&self) -> usize {
        self.num_decoder_layers.unwrap_or(self.num_layers)
    }

    pub fn inner_dim(&self) -> usize {
        self.num_heads * self.d_kv
    }

    /// Parameter count derived from the hyperparameters alone.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let inner = self.inner_dim();
        let attention = 4 * d * inner;
        let ff = match self.feed_forward_proj {
            FeedForward::Relu => 2 * d * self.d_ff,
            FeedForward::GatedGelu => 3 * d * self.d_ff,
        };
        let bias_table = self.relative_attention_num_buckets * self.num_heads;
        let encoder = self.num_layers * (attention + ff + 2 * d) + bias_table + d;
        let decoder = self.decoder_layers() * (2 * attention + ff + 3 * d) + bias_table + d;
        let embeddings = self.vocab_size * d;
        let head = if self.tie_word_embeddings { 0 } else { self.vocab_size * d };
        embeddings + encoder + decoder + head
    }

    /// Adapter parameter count: one bottleneck per block, each with a
    /// down-projection `d -> d / r` and an up-projection back, both biased.
    pub fn adapter_parameter_count(&self, reduction_factor: usize) -> usize {
        let d = self.d_model;
        let bottleneck = adapter_width(d, reduction_factor);
        let per_adapter = d * bottleneck + bottleneck + bottleneck * d + d;
        (self.num_layers + self.decoder_layers()) * per_adapter
    }

    /// A small random configuration for tests and smoke runs.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 16,
            d_kv: 4,
            d_ff: 32,
            num_layers: 2,
            num_decoder_layers: Some(2),
            num_heads: 2,
            relative_attention_num_buckets: 8,
            relative_attention_max_distance: 16,
            dropout_rate: 0.0,
            layer_norm_epsilon: 1e-6,
            feed_forward_proj: FeedForward::GatedGelu,
            tie_word_embeddings: false,
            pad_token_id: 0,
            eos_token_id: 1,
            decoder_start_token_id: 0,
        }
    }
}

pub fn adapter_width(d_model: usize, reduction_factor: usize) -> usize {
    (d_model / reduction_factor.max(1)).max(1)
}
