//! Text featurization.
//!
//! Tokenization lowercases the input and splits it on runs of
//! non-alphanumeric characters. Tokens are hashed into `[0, V)` with 64-bit
//! FNV-1a over their UTF-8 bytes, reduced modulo `V`. A bigram is hashed as
//! the two tokens joined by a single space, which no unigram can contain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default token cap, matching the usual maximum sequence length of 128.
pub const DEFAULT_MAX_SEQ_LEN: usize = 128;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn bucket(token: &str, vocab_size: usize) -> u32 {
    (fnv1a64(token.as_bytes()) % vocab_size as u64) as u32
}

/// Lowercased alphanumeric tokens, at most `max_tokens` of them.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_tokens)
        .map(str::to_lowercase)
        .collect()
}

/// Sparse, L2-normalized bag of hashed n-grams.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    indices: Vec<u32>,
    weights: Vec<f64>,
    vocab_size: usize,
}

impl FeatureVector {
    /// Builds a feature vector from parallel index/weight sequences.
    pub fn new(indices: Vec<u32>, weights: Vec<f64>, vocab_size: usize) -> Result<Self> {
        if indices.len() != weights.len() {
            return Err(Error::usage("feature indices and weights differ in length"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::usage("feature indices must be strictly increasing"));
        }
        if indices.iter().any(|&i| i as usize >= vocab_size) {
            return Err(Error::usage("feature index outside the hashed vocabulary"));
        }
        Ok(Self {
            indices,
            weights,
            vocab_size,
        })
    }

    pub fn empty(vocab_size: usize) -> Self {
        Self {
            indices: Vec::new(),
            weights: Vec::new(),
            vocab_size,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.weights).map(|(&i, &w)| (i as usize, w))
    }
}

/// Hashed unigram (and optionally bigram) counts, normalized to unit
/// Euclidean norm. Consumes at most [`DEFAULT_MAX_SEQ_LEN`] tokens.
pub fn hash_features(text: &str, vocab_size: usize, ngram_max: usize) -> Result<FeatureVector> {
    hash_features_capped(text, vocab_size, ngram_max, DEFAULT_MAX_SEQ_LEN)
}

pub fn hash_features_capped(
    text: &str,
    vocab_size: usize,
    ngram_max: usize,
    max_tokens: usize,
) -> Result<FeatureVector> {
    if vocab_size < 2 {
        return Err(Error::usage(format!("vocabulary size must be >= 2, got {vocab_size}")));
    }
    if !(1..=2).contains(&ngram_max) {
        return Err(Error::usage(format!("ngram_max must be 1 or 2, got {ngram_max}")));
    }
    let tokens = tokenize(text, max_tokens);
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for t in &tokens {
        *counts.entry(bucket(t, vocab_size)).or_default() += 1;
    }
    if ngram_max == 2 {
        for pair in tokens.windows(2) {
            let bigram = format!("{} {}", pair[0], pair[1]);
            *counts.entry(bucket(&bigram, vocab_size)).or_default() += 1;
        }
    }
    let norm = counts
        .values()
        .map(|&c| f64::from(c) * f64::from(c))
        .sum::<f64>()
        .sqrt();
    let (indices, weights) = counts.into_iter().map(|(i, c)| (i, f64::from(c) / norm)).unzip();
    Ok(FeatureVector {
        indices,
        weights,
        vocab_size,
    })
}

/// Hashed token ids in document order, for sequence models.
pub fn token_ids(text: &str, vocab_size: usize, max_tokens: usize) -> Result<Vec<u32>> {
    if vocab_size < 2 {
        return Err(Error::usage(format!("vocabulary size must be >= 2, got {vocab_size}")));
    }
    Ok(tokenize(text, max_tokens)
        .iter()
        .map(|t| bucket(t, vocab_size))
        .collect())
}
