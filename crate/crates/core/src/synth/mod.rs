//! Synthetic long-input retrieval tasks.
//!
//! Each length bucket `ℓ` yields `candidates_per_length` documents of at
//! most `⌊0.75·ℓ⌋` words and `queries_per_length` queries that all share the
//! bucket's candidates.
//!
//! * Passkey: filler sentences with one `"<name>'s passkey is <digits>."`
//!   sentence; the query asks for that person's passkey.
//! * Needle: a window of an essay with one fact sentence; the query is the
//!   fact's paired question.

mod essay;
mod facts;
mod names;

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Document, Qrels, Query, RetrievalTask, TextTriple};
use crate::error::{config_err, Error, Result};
use crate::tokenizer::word_count;

pub use essay::{default_essay, split_sentences, Essay};
pub use facts::{fact, fact_count, NeedleFact};
pub use names::{name, name_count};

pub const DEFAULT_LENGTH_GRID: [usize; 8] = [256, 512, 1024, 2048, 4096, 8192, 16384, 32768];

pub const PASSKEY_FILLER: [&str; 5] = [
    "The grass is green.",
    "The sky is blue.",
    "The sun is yellow.",
    "Here we go.",
    "There and back again.",
];

const MIN_WORDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Passkey,
    Needle,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Passkey => "passkey",
            TaskKind::Needle => "needle",
        }
    }

    fn salt(self) -> u64 {
        match self {
            TaskKind::Passkey => 1,
            TaskKind::Needle => 2,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "passkey" => Ok(TaskKind::Passkey),
            "needle" => Ok(TaskKind::Needle),
            other => Err(config_err(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskConfig {
    pub kind: TaskKind,
    pub length_grid: Vec<usize>,
    pub queries_per_length: usize,
    pub candidates_per_length: usize,
    pub seed: u64,
    /// Haystack for the needle task; `None` uses [`default_essay`].
    #[serde(default)]
    pub essay_path: Option<PathBuf>,
}

impl SyntheticTaskConfig {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self {
            kind,
            length_grid: DEFAULT_LENGTH_GRID.to_vec(),
            queries_per_length: 50,
            candidates_per_length: 100,
            seed,
            essay_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries_per_length == 0 {
            return Err(config_err("queries_per_length must be at least 1"));
        }
        if self.candidates_per_length < self.queries_per_length {
            return Err(config_err(format!(
                "candidates_per_length ({}) must be ≥ queries_per_length ({})",
                self.candidates_per_length, self.queries_per_length
            )));
        }
        if self.length_grid.is_empty() || self.length_grid.contains(&0) {
            return Err(config_err("length grid must hold positive lengths"));
        }
        Ok(())
    }

    /// Seed for one bucket: `seed ⊕ bucket_index ⊕ (kind << 32)`.
    pub fn bucket_seed(&self, bucket_index: usize) -> u64 {
        self.seed ^ bucket_index as u64 ^ (self.kind.salt() << 32)
    }

    pub fn load_essay(&self) -> Result<Essay> {
        match &self.essay_path {
            Some(p) => Essay::from_text(&std::fs::read_to_string(p)?),
            None => Ok(default_essay().clone()),
        }
    }
}

/// `max(8, ⌊0.75 · length_tokens⌋)`.
pub fn word_budget(length_tokens: usize) -> usize {
    (length_tokens * 3 / 4).max(MIN_WORDS)
}

/// One generated bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub length: usize,
    pub task: RetrievalTask,
}

/// Generates every bucket of the grid, each from its own derived seed.
pub fn generate(config: &SyntheticTaskConfig) -> Result<Vec<Bucket>> {
    config.validate()?;
    let essay = match config.kind {
        TaskKind::Needle => Some(config.load_essay()?),
        TaskKind::Passkey => None,
    };
    config
        .length_grid
        .iter()
        .enumerate()
        .map(|(b, &length)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.bucket_seed(b));
            let task = match &essay {
                Some(e) => gen_needle(length, config, e, &mut rng)?,
                None => gen_passkey(length, config, &mut rng)?,
            };
            Ok(Bucket { length, task })
        })
        .collect()
}

fn doc_id(i: usize) -> String {
    format!("d{i:04}")
}

fn query_id(i: usize) -> String {
    format!("q{i:04}")
}

/// Inserts `sentence` at a uniformly chosen boundary of `body`.
fn insert_at_boundary<R: Rng + ?Sized>(body: &mut Vec<String>, sentence: String, rng: &mut R) {
    let at = rng.gen_range(0..=body.len());
    body.insert(at, sentence);
}

/// Appends sentences from `source` (cycling from `start`) while they fit in
/// `budget` words.
fn fill_sentences<S: AsRef<str>>(source: &[S], start: usize, budget: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut used = 0;
    let mut i = start;
    loop {
        let s = source[i % source.len()].as_ref();
        let w = word_count(s);
        if used + w > budget {
            break;
        }
        used += w;
        out.push(s.to_string());
        i += 1;
    }
    out
}

fn passkey_sentence(person: &str, passkey: &str) -> String {
    format!("{person}'s passkey is {passkey}.")
}

pub fn passkey_question(person: &str) -> String {
    format!("What is {person}'s passkey?")
}

fn passkey_document<R: Rng + ?Sized>(person: &str, budget: usize, rng: &mut R) -> Result<String> {
    let passkey = format!("{:06}", rng.gen_range(0..1_000_000u32));
    let key = passkey_sentence(person, &passkey);
    let key_words = word_count(&key);
    if budget < key_words {
        return Err(Error::Generation(format!(
            "word budget {budget} cannot hold the {key_words}-word key sentence"
        )));
    }
    let mut body = fill_sentences(&PASSKEY_FILLER, 0, budget - key_words);
    insert_at_boundary(&mut body, key, rng);
    Ok(body.join(" "))
}

/// Samples `n` distinct queries among `candidates` documents.
fn pick_queries<R: Rng + ?Sized>(candidates: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut picked = sample(rng, candidates, n).into_vec();
    picked.sort_unstable();
    picked
}

fn assemble(documents: Vec<Document>, questions: Vec<(usize, String)>) -> RetrievalTask {
    let mut qrels = Qrels::new();
    let queries = questions
        .into_iter()
        .enumerate()
        .map(|(qi, (di, text))| {
            let id = query_id(qi);
            qrels.entry(id.clone()).or_default().insert(doc_id(di), 1);
            Query { id, text }
        })
        .collect();
    RetrievalTask {
        queries,
        documents,
        qrels,
    }
}

pub fn gen_passkey<R: Rng + ?Sized>(length_tokens: usize, config: &SyntheticTaskConfig, rng: &mut R) -> Result<RetrievalTask> {
    config.validate()?;
    let n = config.candidates_per_length;
    if n > name_count() {
        return Err(Error::Generation(format!(
            "{n} candidates need unique names but only {} exist",
            name_count()
        )));
    }
    let budget = word_budget(length_tokens);
    let people: Vec<String> = sample(rng, name_count(), n).into_iter().map(name).collect();
    let documents = people
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(Document {
                id: doc_id(i),
                title: String::new(),
                text: passkey_document(p, budget, rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let questions = pick_queries(n, config.queries_per_length, rng)
        .into_iter()
        .map(|i| (i, passkey_question(&people[i])))
        .collect();
    Ok(assemble(documents, questions))
}

fn needle_document<R: Rng + ?Sized>(essay: &Essay, fact: &NeedleFact, budget: usize, rng: &mut R) -> Result<String> {
    let fact_words = word_count(&fact.sentence);
    if budget < fact_words {
        return Err(Error::Generation(format!(
            "word budget {budget} cannot hold the {fact_words}-word fact"
        )));
    }
    let start = rng.gen_range(0..essay.sentences().len());
    let mut body = fill_sentences(essay.sentences(), start, budget - fact_words);
    insert_at_boundary(&mut body, fact.sentence.clone(), rng);
    Ok(body.join(" "))
}

pub fn gen_needle<R: Rng + ?Sized>(
    length_tokens: usize,
    config: &SyntheticTaskConfig,
    essay: &Essay,
    rng: &mut R,
) -> Result<RetrievalTask> {
    config.validate()?;
    let n = config.candidates_per_length;
    if n > fact_count() {
        return Err(Error::Generation(format!(
            "{n} candidates need distinct facts but only {} exist",
            fact_count()
        )));
    }
    let budget = word_budget(length_tokens);
    if essay.word_count() < budget {
        return Err(Error::Generation(format!(
            "essay has {} words; bucket {length_tokens} needs at least {budget}",
            essay.word_count()
        )));
    }
    let chosen: Vec<NeedleFact> = sample(rng, fact_count(), n).into_iter().map(fact).collect();
    let documents = chosen
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(Document {
                id: doc_id(i),
                title: String::new(),
                text: needle_document(essay, f, budget, rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let questions = pick_queries(n, config.queries_per_length, rng)
        .into_iter()
        .map(|i| (i, chosen[i].question.clone()))
        .collect();
    Ok(assemble(documents, questions))
}

/// Short contrastive training examples built like the benchmark documents:
/// the positive holds the queried key, negatives are hard (another key of
/// the same kind) except for the last, which is filler only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleConfig {
    pub kind: TaskKind,
    pub count: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub negatives: usize,
    pub seed: u64,
}

pub fn training_triples(config: &TripleConfig, essay: Option<&Essay>) -> Result<Vec<TextTriple>> {
    if config.negatives == 0 {
        return Err(config_err("at least one negative per triple is required"));
    }
    if config.min_words < MIN_WORDS || config.min_words > config.max_words {
        return Err(config_err(format!(
            "document words must satisfy {MIN_WORDS} ≤ min ({}) ≤ max ({})",
            config.min_words, config.max_words
        )));
    }
    let essay = match (config.kind, essay) {
        (TaskKind::Needle, Some(e)) => Some(e),
        (TaskKind::Needle, None) => Some(default_essay()),
        (TaskKind::Passkey, _) => None,
    };
    let pool = match config.kind {
        TaskKind::Passkey => name_count(),
        TaskKind::Needle => fact_count(),
    };
    if config.negatives + 1 > pool {
        return Err(config_err("more negatives than distinct keys"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (config.kind.salt() << 40));
    (0..config.count)
        .map(|_| {
            let budget = rng.gen_range(config.min_words..=config.max_words);
            let keys = sample(&mut rng, pool, config.negatives + 1).into_vec();
            let mut docs = Vec::with_capacity(keys.len());
            let query = match essay {
                None => {
                    for &k in &keys[..config.negatives] {
                        docs.push(passkey_document(&name(k), budget, &mut rng)?);
                    }
                    passkey_question(&name(keys[0]))
                }
                Some(e) => {
                    for &k in &keys[..config.negatives] {
                        docs.push(needle_document(e, &fact(k), budget, &mut rng)?);
                    }
                    fact(keys[0]).question
                }
            };
            docs.push(match essay {
                None => fill_sentences(&PASSKEY_FILLER, rng.gen_range(0..PASSKEY_FILLER.len()), budget).join(" "),
                Some(e) => fill_sentences(e.sentences(), rng.gen_range(0..e.sentences().len()), budget).join(" "),
            });
            let positive = docs.remove(0);
            Ok(TextTriple {
                query,
                positive,
                negatives: docs,
            })
        })
        .collect()
}
