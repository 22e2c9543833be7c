//! Brute-force dense retrieval and the benchmark runner.

mod index;
mod metrics;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::RetrievalTask;
use crate::encoder::{EmbeddingVector, Model, PreparedEncoder};
use crate::error::{Error, Result};
use crate::position::ExtensionSpec;
use crate::tokenizer::Tokenizer;

pub use index::{search, EmbeddingIndex};
pub use metrics::{acc_at_1, ndcg_at_10, NdcgResult, Rankings};

/// Anything that maps text to a unit vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    /// Metadata recorded in reports.
    fn describe(&self) -> Value {
        Value::Null
    }
}

/// A model bound to an extension strategy and a tokenizer.
///
/// With `truncate_to` set, inputs are cut to that many tokens before
/// encoding, which is how an unextended model reads long documents.
#[derive(Debug, Clone)]
pub struct ModelEmbedder<'m> {
    encoder: PreparedEncoder<'m>,
    tokenizer: Tokenizer,
    truncate_to: Option<usize>,
}

impl<'m> ModelEmbedder<'m> {
    pub fn new(model: &'m Model, spec: ExtensionSpec) -> Result<Self> {
        let tokenizer = Tokenizer::new(model.config().vocab_size)?;
        Ok(Self {
            encoder: PreparedEncoder::new(model, spec)?,
            tokenizer,
            truncate_to: None,
        })
    }

    pub fn with_truncation(mut self, max_tokens: usize) -> Self {
        self.truncate_to = Some(max_tokens);
        self
    }

    pub fn spec(&self) -> &ExtensionSpec {
        self.encoder.spec()
    }
}

impl Embedder for ModelEmbedder<'_> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut tokens = self.tokenizer.encode(text)?;
        if let Some(max) = self.truncate_to {
            tokens = tokens.truncated(max);
        }
        self.encoder.encode(&tokens)
    }

    fn describe(&self) -> Value {
        serde_json::json!({
            "spec": self.encoder.spec(),
            "truncate_to": self.truncate_to,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "acc@1")]
    AccAt1,
    #[serde(rename = "ndcg@10")]
    NdcgAt10,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::AccAt1 => "acc@1",
            Metric::NdcgAt10 => "ndcg@10",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acc@1" | "acc1" => Ok(Metric::AccAt1),
            "ndcg@10" | "ndcg10" => Ok(Metric::NdcgAt10),
            other => Err(Error::Config(format!("unknown metric `{other}` (acc@1, ndcg@10)"))),
        }
    }
}

/// A task to score: synthetic buckets use Acc@1, real tasks nDCG@10.
#[derive(Debug, Clone)]
pub struct BenchmarkTask {
    pub name: String,
    pub metric: Metric,
    /// Bucket length in tokens, for synthetic tasks.
    pub length: Option<usize>,
    pub task: RetrievalTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub name: String,
    pub metric: Metric,
    pub length: Option<usize>,
    pub score: f64,
    pub queries: usize,
    pub documents: usize,
    /// Documents longer than the active context; never retrieved.
    pub length_errors: usize,
    /// Queries that could not be encoded; scored as misses.
    pub failed_queries: usize,
    /// Queries without any positive judgement (nDCG only).
    pub excluded_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub timestamp: Option<String>,
    pub seed: Option<u64>,
    pub embedder: Value,
    /// Resolved run configuration, filled in by the caller.
    pub config: Value,
    pub tasks: Vec<TaskScore>,
    /// Arithmetic mean of the task scores.
    pub average: f64,
}

impl EvalReport {
    pub fn recompute_average(&mut self) {
        self.average = mean_score(&self.tasks);
    }

    /// Fixed-width summary, one row per task plus the average.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "task", "metric", "score", "queries", "docs", "len_err"
        );
        for t in &self.tasks {
            out.push_str(&format!(
                "{:<28} {:>8} {:>8.4} {:>8} {:>8} {:>8}\n",
                t.name, t.metric.to_string(), t.score, t.queries, t.documents, t.length_errors
            ));
        }
        out.push_str(&format!("{:<28} {:>8} {:>8.4}\n", "average", "", self.average));
        out
    }
}

fn mean_score(tasks: &[TaskScore]) -> f64 {
    if tasks.is_empty() {
        0.0
    } else {
        tasks.iter().map(|t| t.score).sum::<f64>() / tasks.len() as f64
    }
}

fn run_task(embedder: &dyn Embedder, bt: &BenchmarkTask) -> Result<TaskScore> {
    let task = &bt.task;
    task.validate()?;
    let mut index = EmbeddingIndex::new();
    let mut length_errors = 0;
    for doc in &task.documents {
        match embedder.embed(&doc.full_text()) {
            Ok(e) => index.add(doc.id.clone(), e)?,
            Err(Error::Length { len, limit }) => {
                log::warn!("{}: document {} has {len} tokens > {limit}; skipped", bt.name, doc.id);
                length_errors += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let mut rankings = Rankings::new();
    let mut failed_queries = 0;
    for q in &task.queries {
        let ranked = match embedder.embed(&q.text) {
            Ok(e) if !index.is_empty() => search(&index, &e, 10)?,
            Ok(_) => Vec::new(),
            Err(Error::Length { len, limit }) => {
                log::warn!("{}: query {} has {len} tokens > {limit}", bt.name, q.id);
                failed_queries += 1;
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        rankings.insert(q.id.clone(), ranked);
    }
    let (score, excluded_queries) = match bt.metric {
        Metric::AccAt1 => (acc_at_1(&rankings, &task.qrels)?, 0),
        Metric::NdcgAt10 => {
            let r = ndcg_at_10(&rankings, &task.qrels)?;
            (r.score, r.excluded)
        }
    };
    Ok(TaskScore {
        name: bt.name.clone(),
        metric: bt.metric,
        length: bt.length,
        score,
        queries: task.queries.len(),
        documents: task.documents.len(),
        length_errors,
        failed_queries,
        excluded_queries,
    })
}

/// Encodes each task's documents once, ranks every query against them and
/// aggregates the scores. Over-long documents are recorded and skipped.
pub fn run_benchmark(embedder: &dyn Embedder, tasks: &[BenchmarkTask]) -> Result<EvalReport> {
    let scores = tasks
        .iter()
        .map(|t| run_task(embedder, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: None,
        seed: None,
        embedder: embedder.describe(),
        config: Value::Null,
        average: mean_score(&scores),
        tasks: scores,
    })
}
