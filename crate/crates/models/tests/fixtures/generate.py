"""Regenerates the reference fixtures with Hugging Face transformers.

    python3 generate.py

Writes tiny random checkpoints plus the outputs transformers computes for
them; the Rust tests load the same checkpoints and compare.
"""

import json
from pathlib import Path

import torch
from safetensors.torch import save_file
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
from transformers import BertConfig, BertModel, MPNetConfig, MPNetModel, T5Config, T5ForConditionalGeneration

HERE = Path(__file__).parent
WORDS = (
    "the user says did intend to talk about some booking what is number of people mentioned "
    "question yes no unanswerable wanna change my room reservation we are 2 for a table tonight ?"
).split()
TEXTS = [
    "The user says: wanna change my room reservation Question: did the user intend to talk about some booking?",
    "we are 2 people",
    "a table for 2 tonight ?",
]


def word_tokenizer(specials, template=None):
    vocab = {tok: i for i, tok in enumerate(specials)}
    for w in WORDS:
        vocab.setdefault(w, len(vocab))
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.add_special_tokens(specials)
    if template:
        first, last = template
        tok.post_processor = processors.TemplateProcessing(
            single=f"{first} $A {last}", special_tokens=[(first, vocab[first]), (last, vocab[last])]
        )
    return tok


def dump(model, directory, config, tok):
    directory.mkdir(parents=True, exist_ok=True)
    state = {k: v.contiguous() for k, v in model.state_dict().items()}
    # Tied checkpoints carry one copy of the shared embedding.
    if "lm_head.weight" in state and config.get("tie_word_embeddings", True):
        del state["lm_head.weight"]
    for k in [k for k in state if k.endswith("embed_tokens.weight")]:
        del state[k]
    save_file(state, str(directory / "model.safetensors"))
    (directory / "config.json").write_text(json.dumps(config, indent=2))
    tok.save(str(directory / "tokenizer.json"))


def t5_fixture(name, feed_forward, tied, seed):
    torch.manual_seed(seed)
    tok = word_tokenizer(["<pad>", "</s>", "<unk>"])
    vocab = tok.get_vocab_size()
    config = dict(
        vocab_size=vocab, d_model=16, d_kv=4, d_ff=32, num_layers=2, num_decoder_layers=2, num_heads=2,
        relative_attention_num_buckets=8, relative_attention_max_distance=16, dropout_rate=0.0,
        layer_norm_epsilon=1e-6, feed_forward_proj=feed_forward, tie_word_embeddings=tied,
        pad_token_id=0, eos_token_id=1, decoder_start_token_id=0,
    )
    hf = T5Config(**config)
    # Recent transformers always ties T5 heads; restore the checkpoint semantics.
    hf.tie_word_embeddings = tied
    hf.scale_decoder_outputs = tied
    model = T5ForConditionalGeneration(hf).eval()
    model.encoder.embed_tokens = model.shared
    model.decoder.embed_tokens = model.shared
    dump(model, HERE / name, config, tok)

    ids = [tok.encode(t, add_special_tokens=False).ids + [1] for t in TEXTS]
    width = max(map(len, ids))
    input_ids = torch.tensor([row + [0] * (width - len(row)) for row in ids])
    mask = torch.tensor([[1] * len(row) + [0] * (width - len(row)) for row in ids])
    decoder_ids = torch.tensor([[0, 5, 9, 3]] * len(ids))
    with torch.no_grad():
        out = model(input_ids=input_ids, attention_mask=mask, decoder_input_ids=decoder_ids)
        generated = model.generate(
            input_ids=input_ids, attention_mask=mask, max_new_tokens=6, do_sample=False, num_beams=1
        )
    gen_texts = [tok.decode([t for t in row.tolist() if t > 2]) for row in generated]
    expected = dict(
        input_ids=ids,
        decoder_ids=decoder_ids.tolist(),
        encoder_hidden=out.encoder_last_hidden_state.tolist(),
        logits=out.logits.tolist(),
        generated_ids=[[t for t in row.tolist()[1:]] for row in generated],
        generated_texts=gen_texts,
        parameter_count=sum(p.numel() for p in model.parameters()),
    )
    (HERE / name / "expected.json").write_text(json.dumps(expected))


def encoder_fixture(name, seed):
    torch.manual_seed(seed)
    if name.startswith("bert"):
        tok = word_tokenizer(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "<unk>"], ("[CLS]", "[SEP]"))
        config = dict(
            model_type="bert", vocab_size=tok.get_vocab_size(), hidden_size=16, num_hidden_layers=2,
            num_attention_heads=2, intermediate_size=32, max_position_embeddings=64, type_vocab_size=2,
            layer_norm_eps=1e-12, pad_token_id=0, hidden_dropout_prob=0.0, attention_probs_dropout_prob=0.0,
        )
        model = BertModel(BertConfig(**config)).eval()
    else:
        tok = word_tokenizer(["<s>", "<pad>", "</s>", "<unk>"], ("<s>", "</s>"))
        config = dict(
            model_type="mpnet", vocab_size=tok.get_vocab_size(), hidden_size=16, num_hidden_layers=2,
            num_attention_heads=2, intermediate_size=32, max_position_embeddings=64,
            relative_attention_num_buckets=32, layer_norm_eps=1e-12, pad_token_id=1,
            hidden_dropout_prob=0.0, attention_probs_dropout_prob=0.0,
        )
        model = MPNetModel(MPNetConfig(**config)).eval()
    pad = config["pad_token_id"]
    dump(model, HERE / name, config, tok)

    ids = [tok.encode(t).ids for t in TEXTS]
    width = max(map(len, ids))
    input_ids = torch.tensor([row + [pad] * (width - len(row)) for row in ids])
    mask = torch.tensor([[1] * len(row) + [0] * (width - len(row)) for row in ids])
    with torch.no_grad():
        hidden = model(input_ids=input_ids, attention_mask=mask).last_hidden_state
    m = mask.unsqueeze(-1).float()
    mean = (hidden * m).sum(1) / m.sum(1)
    cls = hidden[:, 0]
    norm = lambda x: torch.nn.functional.normalize(x, dim=-1).tolist()
    expected = dict(texts=TEXTS, input_ids=ids, mean=norm(mean), cls=norm(cls))
    (HERE / name / "expected.json").write_text(json.dumps(expected))


if __name__ == "__main__":
    t5_fixture("t5_gated", "gated-gelu", False, 11)
    t5_fixture("t5_tied", "relu", True, 12)
    encoder_fixture("bert_tiny", 13)
    encoder_fixture("mpnet_tiny", 14)
