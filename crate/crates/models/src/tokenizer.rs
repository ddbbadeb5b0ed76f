use std::path::Path;

use serde_json::json;
use tokenizers::Tokenizer;

use crate::{ModelError, Result};

/// Thin wrapper over a `tokenizer.json` tokenizer.
#[derive(Clone)]
pub struct TextTokenizer {
    inner: Tokenizer,
}

impl std::fmt::Debug for TextTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextTokenizer")
            .field("vocab_size", &self.vocab_size())
            .finish()
    }
}

impl TextTokenizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let inner = Tokenizer::from_file(path).map_err(|e| ModelError::load(path, e))?;
        Ok(Self { inner })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let inner = Tokenizer::from_bytes(json.as_bytes()).map_err(|e| ModelError::Tokenizer(e.to_string()))?;
        Ok(Self { inner })
    }

    /// Lowercasing word-level tokenizer over `words`, split on whitespace
    /// and punctuation. Ids 0, 1 and 2 are `<pad>`, `</s>` and `<unk>`.
    pub fn word_level<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut vocab = serde_json::Map::new();
        let specials = ["<pad>", "</s>", "<unk>"];
        for (id, token) in specials.iter().enumerate() {
            vocab.insert(token.to_string(), json!(id));
        }
        for word in words {
            let word = word.as_ref().to_lowercase();
            if !vocab.contains_key(&word) {
                let id = vocab.len();
                vocab.insert(word, json!(id));
            }
        }
        let added: Vec<_> = specials
            .iter()
            .enumerate()
            .map(|(id, token)| {
                json!({"id": id, "content": token, "single_word": false, "lstrip": false,
                       "rstrip": false, "normalized": false, "special": true})
            })
            .collect();
        let spec = json!({
            "version": "1.0",
            "truncation": null,
            "padding": null,
            "added_tokens": added,
            "normalizer": {"type": "Lowercase"},
            "pre_tokenizer": {"type": "Whitespace"},
            "post_processor": null,
            "decoder": null,
            "model": {"type": "WordLevel", "vocab": vocab, "unk_token": "<unk>"}
        });
        Self::from_json(&spec.to_string())
    }

    /// Token ids without special tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let encoding = self
            .inner
            .encode(text, false)
            .map_err(|e| ModelError::Tokenizer(e.to_string()))?;
        Ok(encoding.get_ids().to_vec())
    }

    /// Token ids with the tokenizer's own special-token template applied.
    pub fn encode_with_specials(&self, text: &str) -> Result<Vec<u32>> {
        let encoding = self
            .inner
            .encode(text, true)
            .map_err(|e| ModelError::Tokenizer(e.to_string()))?;
        Ok(encoding.get_ids().to_vec())
    }

    /// Text of `ids` with special tokens dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        self.inner
            .decode(ids, true)
            .map_err(|e| ModelError::Tokenizer(e.to_string()))
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.inner.token_to_id(token)
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_level_round_trip() {
        let tok = TextTokenizer::word_level(&["yes", "no", "did", "the", "user", "?"]).unwrap();
        assert_eq!(tok.token_id("</s>"), Some(1));
        let ids = tok.encode("Did the user?").unwrap();
        assert_eq!(ids, vec![5, 6, 7, 8]);
        assert_eq!(tok.encode("martian").unwrap(), vec![2]);
        assert_eq!(tok.decode(&[3, 1, 0]).unwrap(), "yes");
        assert_eq!(tok.vocab_size(), 9);
    }
}
