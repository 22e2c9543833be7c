//! Whitespace tokenizer over a hashed vocabulary.
//!
//! Each whitespace-separated word is lower-cased, stripped of surrounding
//! punctuation and hashed (FNV-1a, 64 bit) into `[0, vocab_size)`. Token
//! counts therefore equal word counts, which keeps the word budgets of the
//! synthetic tasks and the token budgets of the encoder in a fixed ratio.

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 30_522;

/// A non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("token sequence has no tokens".into()));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sub-sequence `[start, end)`. Panics on an empty or out-of-range span.
    pub fn slice(&self, start: usize, end: usize) -> TokenSequence {
        assert!(start < end && end <= self.ids.len(), "bad token span");
        TokenSequence {
            ids: self.ids[start..end].to_vec(),
        }
    }

    pub fn truncated(&self, max_len: usize) -> TokenSequence {
        let end = self.ids.len().min(max_len.max(1));
        self.slice(0, end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        Ok(Self { vocab_size })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token_id(&self, word: &str) -> usize {
        (fnv1a(word.as_bytes()) % self.vocab_size as u64) as usize
    }

    /// Tokenizes `text`. Words that are pure punctuation still count as one
    /// token so the token count always equals the whitespace word count.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let ids = text
            .split_whitespace()
            .map(|w| {
                let norm = normalize_word(w);
                let key = if norm.is_empty() { w.to_string() } else { norm };
                self.token_id(&key)
            })
            .collect::<Vec<_>>();
        if ids.is_empty() {
            return Err(Error::EmptyInput("text contains no words".into()));
        }
        TokenSequence::new(ids)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
