//! Sentence encoders: the trait, a weight-free hashing encoder and a
//! content-addressed cache.

use std::collections::HashMap;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Maps texts to L2-normalized vectors of a fixed dimensionality.
pub trait SentenceEncoder: Send + Sync {
    /// Identifier used for cache keys and manifests.
    fn id(&self) -> &str;

    fn dimension(&self) -> usize;

    /// One unit-norm vector per text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Scales `v` to unit L2 norm. Zero vectors are left unchanged.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Cosine similarity; 0.0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Feature-hashing encoder over lowercased word unigrams and character
/// trigrams. Needs no weights; used as a deterministic stand-in for neural
/// encoders.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    id: String,
    dimension: usize,
}

impl HashingEncoder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Encoder("hashing encoder dimension must be positive".into()));
        }
        Ok(Self {
            id: format!("hashing-{dimension}"),
            dimension,
        })
    }

    fn bucket(&self, feature: &str) -> (usize, f32) {
        let digest = Sha256::digest(feature.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        let h = u64::from_le_bytes(head);
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((h % self.dimension as u64) as usize, sign)
    }

    fn encode_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        let lowered = text.to_lowercase();
        for word in lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let (i, s) = self.bucket(&format!("w:{word}"));
            v[i] += s;
            let padded: Vec<char> = format!("#{word}#").chars().collect();
            for gram in padded.windows(3) {
                let (i, s) = self.bucket(&format!("c:{}", gram.iter().collect::<String>()));
                v[i] += 0.5 * s;
            }
        }
        l2_normalize(&mut v);
        v
    }
}

impl SentenceEncoder for HashingEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}

type CacheKey = (String, [u8; 32]);

/// Memoizes another encoder, keyed by (encoder id, SHA-256 of the text).
pub struct CachedEncoder<E> {
    inner: E,
    cache: Mutex<HashMap<CacheKey, Vec<f32>>>,
}

impl<E: SentenceEncoder> CachedEncoder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn key(&self, text: &str) -> (String, [u8; 32]) {
        (self.inner.id().to_string(), Sha256::digest(text.as_bytes()).into())
    }
}

impl<E: SentenceEncoder> SentenceEncoder for CachedEncoder<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let keys: Vec<_> = texts.iter().map(|t| self.key(t)).collect();
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .zip(&keys)
                .filter(|(_, k)| !cache.contains_key(*k) && seen.insert((*k).clone()))
                .map(|(t, _)| t.clone())
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.inner.embed(&missing)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for (text, vector) in missing.iter().zip(vectors) {
                cache.insert(self.key(text), vector);
            }
        }
        let cache = self.cache.lock().expect("cache lock");
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }
}
