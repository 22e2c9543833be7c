//! Haystack text for the needle task.
//!
//! The default essay is generated procedurally from a fixed seed: a few
//! thousand plain declarative sentences about work, writing and cities.
//! Any plain-text file can be used instead.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenizer::word_count;

const SUBJECTS: &[&str] = &[
    "Most people", "A good writer", "The best founders", "Every city", "A small team",
    "Young programmers", "An honest critic", "The typical investor", "A careful reader",
    "Anyone starting out", "The average office", "A curious student", "Old institutions",
    "A new company", "Good teachers",
];
const VERBS: &[&str] = &[
    "tend to underestimate", "rarely notice", "slowly learn", "often ignore", "quietly depend on",
    "eventually discover", "keep returning to", "seldom question", "gradually value",
    "usually misjudge", "learn to respect", "work hard to avoid",
];
const OBJECTS: &[&str] = &[
    "the cost of distraction", "the value of plain prose", "how much time a draft takes",
    "the habits of their neighbors", "the difference between work and busywork",
    "the importance of taste", "what their users actually want", "the weight of early decisions",
    "how ideas spread between people", "the shape of a long project", "the role of luck",
    "the pleasure of finishing something", "the hidden structure of a market",
    "the quiet advantages of patience",
];
const TAILS: &[&str] = &[
    "when they are under pressure", "until someone points it out", "in the first few years",
    "because the feedback is slow", "even when the evidence is clear", "after a long summer",
    "in ways that are hard to measure", "once the novelty wears off", "if nobody is watching",
    "while the rest of the world moves on", "as the work gets harder", "without meaning to",
];

const DEFAULT_SENTENCES: usize = 3_000;
const ESSAY_SEED: u64 = 0x5eed_e55a;

/// A text split into sentences on period-space boundaries.
#[derive(Debug, Clone)]
pub struct Essay {
    sentences: Vec<String>,
    words: usize,
}

impl Essay {
    pub fn from_text(text: &str) -> Result<Self> {
        let sentences = split_sentences(text);
        if sentences.is_empty() {
            return Err(Error::Generation("essay text is empty".into()));
        }
        let words = sentences.iter().map(|s| word_count(s)).sum();
        Ok(Self { sentences, words })
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn word_count(&self) -> usize {
        self.words
    }
}

/// Splits on `". "` and normalizes whitespace; each sentence keeps its
/// final period.
pub fn split_sentences(text: &str) -> Vec<String> {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    flat.split(". ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| if s.ends_with('.') { s.to_string() } else { format!("{s}.") })
        .collect()
}

pub fn default_essay() -> &'static Essay {
    static ESSAY: OnceLock<Essay> = OnceLock::new();
    ESSAY.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(ESSAY_SEED);
        let mut text = String::new();
        for _ in 0..DEFAULT_SENTENCES {
            let pick = |xs: &[&'static str], rng: &mut ChaCha8Rng| *xs.choose(rng).expect("non-empty");
            let s = pick(SUBJECTS, &mut rng);
            let v = pick(VERBS, &mut rng);
            let o = pick(OBJECTS, &mut rng);
            let t = pick(TAILS, &mut rng);
            text.push_str(&format!("{s} {v} {o} {t}. "));
        }
        Essay::from_text(&text).expect("generated essay is non-empty")
    })
}
