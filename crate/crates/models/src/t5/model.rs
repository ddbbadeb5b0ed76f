//! T5-style encoder-decoder with optional bottleneck adapters.
//!
//! Parameter names follow the hub checkpoint layout
//! (`encoder.block.0.layer.0.SelfAttention.q.weight`, ...) so released
//! safetensors load without renaming. Adapters live under
//! `{stack}.block.{i}.adapter.{down,up}.{weight,bias}` and sit after each
//! block's feed-forward sublayer.

use candle_core::{DType, Tensor, D};

use super::config::{adapter_width, FeedForward, T5Config};
use crate::layers::{causal_bias, linear, padding_bias, rms_norm, softmax_last, Ctx};
use crate::params::{Init, ParamStore};
use crate::position::relative_bias;
use crate::Result;

struct Attention {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    o: Tensor,
    heads: usize,
    d_kv: usize,
    bias_table: Option<Tensor>,
}

impl Attention {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &T5Config, has_bias: bool) -> Result<Self> {
        let (d, inner) = (cfg.d_model, cfg.inner_dim());
        let dm = d as f64;
        let q = store.get(&format!("{prefix}.q.weight"), &[inner, d], Init::Normal((dm * cfg.d_kv as f64).powf(-0.5)))?;
        let k = store.get(&format!("{prefix}.k.weight"), &[inner, d], Init::Normal(dm.powf(-0.5)))?;
        let v = store.get(&format!("{prefix}.v.weight"), &[inner, d], Init::Normal(dm.powf(-0.5)))?;
        let o = store.get(&format!("{prefix}.o.weight"), &[d, inner], Init::Normal((inner as f64).powf(-0.5)))?;
        let bias_table = if has_bias {
            Some(store.get(
                &format!("{prefix}.relative_attention_bias.weight"),
                &[cfg.relative_attention_num_buckets, cfg.num_heads],
                Init::Normal(dm.powf(-0.5)),
            )?)
        } else {
            None
        };
        Ok(Self {
            q,
            k,
            v,
            o,
            heads: cfg.num_heads,
            d_kv: cfg.d_kv,
            bias_table,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, len, _) = x.dims3()?;
        Ok(x.reshape((b, len, self.heads, self.d_kv))?.transpose(1, 2)?.contiguous()?)
    }

    /// `bias` already combines position bias and masks, broadcastable to
    /// `[batch, heads, q_len, k_len]`. T5 does not scale scores.
    fn forward(&self, x: &Tensor, kv: &Tensor, bias: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (b, q_len, _) = x.dims3()?;
        let q = self.split_heads(&linear(x, &self.q, None)?)?;
        let k = self.split_heads(&linear(kv, &self.k, None)?)?;
        let v = self.split_heads(&linear(kv, &self.v, None)?)?;
        let scores = q.matmul(&k.t()?.contiguous()?)?.broadcast_add(bias)?;
        let weights = ctx.dropout(&softmax_last(&scores)?)?;
        let out = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, q_len, self.heads * self.d_kv))?;
        linear(&out, &self.o, None)
    }
}

enum Ffn {
    Relu { wi: Tensor, wo: Tensor },
    GatedGelu { wi_0: Tensor, wi_1: Tensor, wo: Tensor },
}

impl Ffn {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &T5Config) -> Result<Self> {
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let wi_std = Init::Normal((d as f64).powf(-0.5));
        let wo = store.get(&format!("{prefix}.wo.weight"), &[d, ff], Init::Normal((ff as f64).powf(-0.5)))?;
        Ok(match cfg.feed_forward_proj {
            FeedForward::Relu => Ffn::Relu {
                wi: store.get(&format!("{prefix}.wi.weight"), &[ff, d], wi_std)?,
                wo,
            },
            FeedForward::GatedGelu => Ffn::GatedGelu {
                wi_0: store.get(&format!("{prefix}.wi_0.weight"), &[ff, d], wi_std)?,
                wi_1: store.get(&format!("{prefix}.wi_1.weight"), &[ff, d], wi_std)?,
                wo,
            },
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        match self {
            Ffn::Relu { wi, wo } => {
                let h = ctx.dropout(&linear(x, wi, None)?.relu()?)?;
                linear(&h, wo, None)
            }
            Ffn::GatedGelu { wi_0, wi_1, wo } => {
                let gate = linear(x, wi_0, None)?.gelu()?;
                let h = ctx.dropout(&(gate * linear(x, wi_1, None)?)?)?;
                linear(&h, wo, None)
            }
        }
    }
}

/// Bottleneck adapter `x + up(relu(down(x)))`; the up-projection starts at
/// zero so a new adapter is the identity.
struct Adapter {
    down_w: Tensor,
    down_b: Tensor,
    up_w: Tensor,
    up_b: Tensor,
}

impl Adapter {
    fn new(store: &mut ParamStore, prefix: &str, d: usize, reduction_factor: usize) -> Result<Self> {
        let width = adapter_width(d, reduction_factor);
        Ok(Self {
            down_w: store.get(&format!("{prefix}.down.weight"), &[width, d], Init::Normal(0.01))?,
            down_b: store.get(&format!("{prefix}.down.bias"), &[width], Init::Zeros)?,
            up_w: store.get(&format!("{prefix}.up.weight"), &[d, width], Init::Zeros)?,
            up_b: store.get(&format!("{prefix}.up.bias"), &[d], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = linear(x, &self.down_w, Some(&self.down_b))?.relu()?;
        Ok((x + linear(&h, &self.up_w, Some(&self.up_b))?)?)
    }
}

struct Block {
    self_attn: Attention,
    self_ln: Tensor,
    cross: Option<(Attention, Tensor)>,
    ffn: Ffn,
    ffn_ln: Tensor,
    adapter: Option<Adapter>,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &T5Config,
        decoder: bool,
        first: bool,
        adapter: Option<usize>,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let self_attn = Attention::new(store, &format!("{prefix}.layer.0.SelfAttention"), cfg, first)?;
        let self_ln = store.get(&format!("{prefix}.layer.0.layer_norm.weight"), &[d], Init::Ones)?;
        let (cross, ff_index) = if decoder {
            let attn = Attention::new(store, &format!("{prefix}.layer.1.EncDecAttention"), cfg, false)?;
            let ln = store.get(&format!("{prefix}.layer.1.layer_norm.weight"), &[d], Init::Ones)?;
            (Some((attn, ln)), 2)
        } else {
            (None, 1)
        };
        let ffn = Ffn::new(store, &format!("{prefix}.layer.{ff_index}.DenseReluDense"), cfg)?;
        let ffn_ln = store.get(&format!("{prefix}.layer.{ff_index}.layer_norm.weight"), &[d], Init::Ones)?;
        let adapter = adapter
            .map(|r| Adapter::new(store, &format!("{prefix}.adapter"), d, r))
            .transpose()?;
        Ok(Self {
            self_attn,
            self_ln,
            cross,
            ffn,
            ffn_ln,
            adapter,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        self_bias: &Tensor,
        memory: Option<(&Tensor, &Tensor)>,
        eps: f64,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let normed = rms_norm(x, &self.self_ln, eps)?;
        let mut h = (x + ctx.dropout(&self.self_attn.forward(&normed, &normed, self_bias, ctx)?)?)?;
        if let (Some((attn, ln)), Some((enc, enc_bias))) = (&self.cross, memory) {
            let normed = rms_norm(&h, ln, eps)?;
            h = (&h + ctx.dropout(&attn.forward(&normed, enc, enc_bias, ctx)?)?)?;
        }
        let normed = rms_norm(&h, &self.ffn_ln, eps)?;
        h = (&h + ctx.dropout(&self.ffn.forward(&normed, ctx)?)?)?;
        match &self.adapter {
            Some(adapter) => adapter.forward(&h),
            None => Ok(h),
        }
    }
}

struct Stack {
    blocks: Vec<Block>,
    final_ln: Tensor,
    decoder: bool,
}

impl Stack {
    fn new(store: &mut ParamStore, name: &str, cfg: &T5Config, decoder: bool, adapter: Option<usize>) -> Result<Self> {
        let layers = if decoder { cfg.decoder_layers() } else { cfg.num_layers };
        let blocks = (0..layers)
            .map(|i| Block::new(store, &format!("{name}.block.{i}"), cfg, decoder, i == 0, adapter))
            .collect::<Result<Vec<_>>>()?;
        let final_ln = store.get(&format!("{name}.final_layer_norm.weight"), &[cfg.d_model], Init::Ones)?;
        Ok(Self {
            blocks,
            final_ln,
            decoder,
        })
    }

    fn position_bias(&self, cfg: &T5Config, q_len: usize, k_len: usize) -> Result<Tensor> {
        let table = self.blocks[0]
            .self_attn
            .bias_table
            .as_ref()
            .expect("first block owns the relative bias table");
        relative_bias(table, q_len, k_len, !self.decoder, cfg.relative_attention_max_distance)
    }

    fn forward(
        &self,
        cfg: &T5Config,
        embedded: &Tensor,
        mask_bias: &Tensor,
        memory: Option<(&Tensor, &Tensor)>,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let len = embedded.dim(1)?;
        let self_bias = self.position_bias(cfg, len, len)?.broadcast_add(mask_bias)?;
        let mut h = ctx.dropout(embedded)?;
        for block in &self.blocks {
            h = block.forward(&h, &self_bias, memory, cfg.layer_norm_epsilon, ctx)?;
        }
        ctx.dropout(&rms_norm(&h, &self.final_ln, cfg.layer_norm_epsilon)?)
    }
}

pub struct T5Model {
    cfg: T5Config,
    shared: Tensor,
    encoder: Stack,
    decoder: Stack,
    lm_head: Option<Tensor>,
}

impl T5Model {
    /// Builds the model from `store`, creating missing parameters when the
    /// store allows it. `adapter` is the reduction factor, if any.
    pub fn new(cfg: &T5Config, store: &mut ParamStore, adapter: Option<usize>) -> Result<Self> {
        let d = cfg.d_model;
        let shared = store.get("shared.weight", &[cfg.vocab_size, d], Init::Normal(1.0))?;
        let encoder = Stack::new(store, "encoder", cfg, false, adapter)?;
        let decoder = Stack::new(store, "decoder", cfg, true, adapter)?;
        let lm_head = if cfg.tie_word_embeddings {
            None
        } else {
            Some(store.get("lm_head.weight", &[cfg.vocab_size, d], Init::Normal((d as f64).powf(-0.5)))?)
        };
        Ok(Self {
            cfg: cfg.clone(),
            shared,
            encoder,
            decoder,
            lm_head,
        })
    }

    pub fn config(&self) -> &T5Config {
        &self.cfg
    }

    /// Encoder states `[batch, len, d_model]`; `mask` is 1 for real tokens.
    pub fn encode(&self, input_ids: &Tensor, mask: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let embedded = self.embed(input_ids)?;
        self.encoder.forward(&self.cfg, &embedded, &padding_bias(mask)?, None, ctx)
    }

    /// Vocabulary logits `[batch, dec_len, vocab]`.
    pub fn decode(&self, decoder_ids: &Tensor, encoded: &Tensor, mask: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let len = decoder_ids.dim(1)?;
        let embedded = self.embed(decoder_ids)?;
        let causal = causal_bias(len, decoder_ids.device())?;
        let enc_bias = padding_bias(mask)?;
        let h = self
            .decoder
            .forward(&self.cfg, &embedded, &causal, Some((encoded, &enc_bias)), ctx)?;
        match &self.lm_head {
            Some(head) => linear(&h, head, None),
            None => linear(&(h * (self.cfg.d_model as f64).powf(-0.5))?, &self.shared, None),
        }
    }

    fn embed(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, len) = ids.dims2()?;
        Ok(self
            .shared
            .embedding(&ids.flatten_all()?)?
            .reshape((b, len, self.cfg.d_model))?)
    }

    /// Mean token cross-entropy of `labels` (teacher forcing); positions with
    /// `label_mask` 0 are ignored.
    pub fn loss(
        &self,
        input_ids: &Tensor,
        mask: &Tensor,
        decoder_ids: &Tensor,
        labels: &Tensor,
        label_mask: &Tensor,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let encoded = self.encode(input_ids, mask, ctx)?;
        let logits = self.decode(decoder_ids, &encoded, mask, ctx)?;
        let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let picked = log_probs.gather(&labels.unsqueeze(D::Minus1)?, D::Minus1)?.squeeze(D::Minus1)?;
        let label_mask = label_mask.to_dtype(DType::F32)?;
        let total = (picked * &label_mask)?.sum_all()?;
        let count = label_mask.sum_all()?;
        Ok((total.neg()? / count)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn recorded_inventory_matches_closed_form() {
        for ff in [FeedForward::Relu, FeedForward::GatedGelu] {
            for tied in [true, false] {
                let cfg = T5Config {
                    feed_forward_proj: ff,
                    tie_word_embeddings: tied,
                    num_decoder_layers: Some(3),
                    ..T5Config::tiny(50)
                };
                let mut store = ParamStore::recording();
                T5Model::new(&cfg, &mut store, None).unwrap();
                assert_eq!(store.parameter_count(), cfg.parameter_count());

                let mut store = ParamStore::recording();
                T5Model::new(&cfg, &mut store, Some(4)).unwrap();
                store.set_trainable(crate::params::Trainable::AdaptersOnly);
                assert_eq!(store.trainable_parameter_count(), cfg.adapter_parameter_count(4));
            }
        }
    }

    #[test]
    fn new_adapters_are_identity() {
        let cfg = T5Config::tiny(20);
        let mut plain = ParamStore::fresh(9, &Device::Cpu);
        let base = T5Model::new(&cfg, &mut plain, None).unwrap();
        let mut with = plain.deep_copy().unwrap();
        let adapted = T5Model::new(&cfg, &mut with, Some(4)).unwrap();
        let ids = Tensor::new(&[[3u32, 4, 5, 1]], &Device::Cpu).unwrap();
        let mask = Tensor::ones((1, 4), DType::U32, &Device::Cpu).unwrap();
        let dec = Tensor::new(&[[0u32, 7]], &Device::Cpu).unwrap();
        let ctx = Ctx::eval();
        let a = base.decode(&dec, &base.encode(&ids, &mask, &ctx).unwrap(), &mask, &ctx).unwrap();
        let b = adapted
            .decode(&dec, &adapted.encode(&ids, &mask, &ctx).unwrap(), &mask, &ctx)
            .unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-6);
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let cfg = T5Config::tiny(20);
        let mut store = ParamStore::fresh(1, &Device::Cpu);
        let model = T5Model::new(&cfg, &mut store, None).unwrap();
        let ctx = Ctx::eval();
        let dec = Tensor::new(&[[0u32, 5]], &Device::Cpu).unwrap();
        let short = Tensor::new(&[[6u32, 7, 1]], &Device::Cpu).unwrap();
        let short_mask = Tensor::ones((1, 3), DType::U32, &Device::Cpu).unwrap();
        let padded = Tensor::new(&[[6u32, 7, 1, 0, 0]], &Device::Cpu).unwrap();
        let padded_mask = Tensor::new(&[[1u32, 1, 1, 0, 0]], &Device::Cpu).unwrap();
        let a = model
            .decode(&dec, &model.encode(&short, &short_mask, &ctx).unwrap(), &short_mask, &ctx)
            .unwrap();
        let b = model
            .decode(&dec, &model.encode(&padded, &padded_mask, &ctx).unwrap(), &padded_mask, &ctx)
            .unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5, "{diff}");
    }
}
