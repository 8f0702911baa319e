//! Hashed unigram/bigram features.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{FeatureMode, ModelError};
use crate::corpus::Tweet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    /// Number of hash buckets; a power of two.
    pub dim: usize,
    pub bigrams: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mode: FeatureMode::TextAndHashtags,
            dim: 1 << 18,
            bigrams: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.dim.is_power_of_two() || self.dim > u32::MAX as usize {
            return Err(ModelError::InvalidDim(self.dim));
        }
        Ok(())
    }
}

/// Sparse feature vector; indices strictly increasing, no zero values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }
}

/// Lowercases and splits on anything that is not alphanumeric or `_`.
/// A `#` starts a new token and stays as its prefix; a bare `#` is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() && current != "#" {
            tokens.push(std::mem::take(current));
        }
        current.clear();
    };
    for c in text.to_lowercase().chars() {
        if c == '#' {
            flush(&mut current, &mut tokens);
            current.push('#');
        } else if c.is_alphanumeric() || c == '_' {
            current.push(c);
        } else {
            flush(&mut current, &mut tokens);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Stable 64-bit FNV-1a hash of the token bytes, masked to `dim` buckets.
pub fn hash_token(token: &str, dim: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() & (dim as u64 - 1)) as u32
}

fn ngrams(tokens: &[&str], bigrams: bool) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    if bigrams {
        out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    out
}

/// Feature strings for a text before hashing.
///
/// `TextOnly` drops `#tag` tokens and takes n-grams of the remaining words;
/// `HashtagsOnly` keeps only `#tag` unigrams; `TextAndHashtags` takes
/// n-grams over the full token stream, so it covers both plus the bigrams
/// that straddle a word and a hashtag.
pub fn feature_strings(text: &str, mode: FeatureMode, bigrams: bool) -> Vec<String> {
    let tokens = tokenize(text);
    let all: Vec<&str> = tokens.iter().map(String::as_str).collect();
    match mode {
        FeatureMode::TextOnly => {
            let words: Vec<&str> = all.iter().copied().filter(|t| !t.starts_with('#')).collect();
            ngrams(&words, bigrams)
        }
        FeatureMode::HashtagsOnly => all.iter().filter(|t| t.starts_with('#')).map(|t| t.to_string()).collect(),
        FeatureMode::TextAndHashtags => ngrams(&all, bigrams),
    }
}

pub fn featurize_text(text: &str, cfg: &FeatureConfig) -> SparseVector {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for f in feature_strings(text, cfg.mode, cfg.bigrams) {
        *acc.entry(hash_token(&f, cfg.dim)).or_default() += 1.0;
    }
    SparseVector {
        dim: cfg.dim,
        entries: acc.into_iter().filter(|&(_, v)| v != 0.0).collect(),
    }
}

pub fn featurize(tweet: &Tweet, cfg: &FeatureConfig) -> SparseVector {
    featurize_text(&tweet.text, cfg)
}
