//! Retrieval tasks and their on-disk formats.
//!
//! A task directory holds three BEIR-style files:
//!
//! * `queries.jsonl`: one `{"_id", "text"}` object per line
//! * `corpus.jsonl`: one `{"_id", "title", "text"}` object per line
//! * `qrels.tsv`: `query-id<TAB>corpus-id<TAB>score` with a header row
//!
//! Training triples for tuning live in a single JSONL file of
//! `{"query", "positive", "negatives"}` objects.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{word_count, Tokenizer};
use crate::tuner::TrainingPair;

pub const QUERIES_FILE: &str = "queries.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QRELS_FILE: &str = "qrels.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// query id → (doc id → graded relevance).
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievalTask {
    pub queries: Vec<Query>,
    pub documents: Vec<Document>,
    pub qrels: Qrels,
}

impl RetrievalTask {
    /// Ids are unique, every qrel points at existing ids and every query has
    /// at least one judged document.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let query_ids = unique_ids(self.queries.iter().map(|q| q.id.as_str()), "query", &mut problems);
        let doc_ids = unique_ids(self.documents.iter().map(|d| d.id.as_str()), "document", &mut problems);
        for (qid, docs) in &self.qrels {
            if !query_ids.contains(qid.as_str()) {
                problems.push(format!("qrel for unknown query `{qid}`"));
            }
            for did in docs.keys() {
                if !doc_ids.contains(did.as_str()) {
                    problems.push(format!("qrel ({qid}, {did}) references a missing document"));
                }
            }
        }
        for q in &self.queries {
            if self.qrels.get(&q.id).is_none_or(|d| d.is_empty()) {
                problems.push(format!("query `{}` has no relevance judgements", q.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn stats(&self) -> TaskStats {
        let mean = |counts: Vec<usize>| {
            if counts.is_empty() {
                0.0
            } else {
                counts.iter().sum::<usize>() as f64 / counts.len() as f64
            }
        };
        TaskStats {
            queries: self.queries.len(),
            documents: self.documents.len(),
            qrels: self.qrels.values().map(BTreeMap::len).sum(),
            mean_query_words: mean(self.queries.iter().map(|q| word_count(&q.text)).collect()),
            mean_document_words: mean(self.documents.iter().map(|d| word_count(&d.full_text())).collect()),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(QUERIES_FILE), &self.queries)?;
        write_jsonl(&dir.join(CORPUS_FILE), &self.documents)?;
        let mut out = String::from("query-id\tcorpus-id\tscore\n");
        for (qid, docs) in &self.qrels {
            for (did, rel) in docs {
                out.push_str(&format!("{qid}\t{did}\t{rel}\n"));
            }
        }
        fs::write(dir.join(QRELS_FILE), out)?;
        Ok(())
    }

    /// Reads a task directory without validating cross references.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            queries: read_jsonl(&dir.join(QUERIES_FILE))?,
            documents: read_jsonl(&dir.join(CORPUS_FILE))?,
            qrels: read_qrels(&dir.join(QRELS_FILE))?,
        })
    }
}

impl Document {
    /// Title and body joined by a space, or the body alone.
    pub fn full_text(&self) -> String {
        if self.title.trim().is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

fn unique_ids<'a>(ids: impl Iterator<Item = &'a str>, kind: &str, problems: &mut Vec<String>) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            problems.push(format!("duplicate {kind} id `{id}`"));
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskStats {
    pub queries: usize,
    pub documents: usize,
    pub qrels: usize,
    pub mean_query_words: f64,
    pub mean_document_words: f64,
}

/// Reads and validates a user-supplied task.
pub fn ingest_real_task(queries: &Path, corpus: &Path, qrels: &Path) -> Result<(RetrievalTask, TaskStats)> {
    let task = RetrievalTask {
        queries: read_jsonl(queries)?,
        documents: read_jsonl(corpus)?,
        qrels: read_qrels(qrels)?,
    };
    task.validate()?;
    let stats = task.stats();
    Ok((task, stats))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Blank lines are skipped; a malformed line is a parse error carrying its
/// 1-based line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Tab-separated qrels. A first line whose score column is not a number is
/// taken as the header.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let text = fs::read_to_string(path)?;
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let score = match cols[2].trim().parse::<u32>() {
            Ok(s) => s,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_err(format!("bad score `{}`: {e}", cols[2]))),
        };
        qrels
            .entry(cols[0].trim().to_string())
            .or_default()
            .insert(cols[1].trim().to_string(), score);
    }
    Ok(qrels)
}

/// A training example in text form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextTriple {
    pub query: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl TextTriple {
    /// Tokenizes every text, truncating to `max_len` tokens.
    pub fn tokenize(&self, tokenizer: &Tokenizer, max_len: usize) -> Result<TrainingPair> {
        let enc = |t: &str| tokenizer.encode(t).map(|s| s.truncated(max_len));
        Ok(TrainingPair {
            query: enc(&self.query)?,
            positive: enc(&self.positive)?,
            negatives: self.negatives.iter().map(|n| enc(n)).collect::<Result<_>>()?,
        })
    }
}
