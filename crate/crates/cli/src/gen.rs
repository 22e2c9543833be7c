use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ctxext_core::dataset::{ingest_real_task, RetrievalTask};
use ctxext_core::eval::Metric;
use ctxext_core::synth::{generate, SyntheticTaskConfig, TaskKind, DEFAULT_LENGTH_GRID};

use crate::error::{required, CliResult};
use crate::{parse_setting, Invocation};

/// Per-task metadata written next to the task files.
pub const TASK_META_FILE: &str = "task.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub metric: Metric,
    pub length: Option<usize>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GenArgs {
    /// passkey or needle.
    #[arg(long)]
    pub kind: Option<String>,
    /// Bucket lengths in tokens, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub length_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub queries_per_length: Option<usize>,
    #[arg(long)]
    pub candidates_per_length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plain-text haystack for the needle task.
    #[arg(long)]
    pub essay_path: Option<PathBuf>,
    /// Output directory; one sub-directory per bucket.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenArgs {
    fn resolve(mut self) -> Self {
        self.kind.get_or_insert_with(|| "passkey".into());
        self.length_grid.get_or_insert_with(|| DEFAULT_LENGTH_GRID.to_vec());
        self.queries_per_length.get_or_insert(50);
        self.candidates_per_length.get_or_insert(100);
        self.seed.get_or_insert(42);
        self
    }
}

pub fn bucket_dir_name(kind: TaskKind, length: usize) -> String {
    format!("{kind}-{length}")
}

pub fn run_gen(args: GenArgs, inv: &Invocation) -> CliResult<()> {
    let args = args.resolve();
    let out = required(&args.out, "out")?;
    let kind: TaskKind = parse_setting("kind", args.kind.as_deref().unwrap_or_default())?;
    let config = SyntheticTaskConfig {
        kind,
        length_grid: args.length_grid.clone().unwrap_or_default(),
        queries_per_length: args.queries_per_length.unwrap_or_default(),
        candidates_per_length: args.candidates_per_length.unwrap_or_default(),
        seed: args.seed.unwrap_or_default(),
        essay_path: args.essay_path.clone(),
    };
    let buckets = generate(&config)?;
    for b in &buckets {
        let name = bucket_dir_name(kind, b.length);
        let dir = out.join(&name);
        b.task.write_dir(&dir)?;
        let meta = TaskMeta {
            name,
            metric: Metric::AccAt1,
            length: Some(b.length),
        };
        fs::write(dir.join(TASK_META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    let manifest = inv.snapshot(&args);
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} {kind} buckets to {}", buckets.len(), out.display());
    Ok(())
}

/// Task directories under `path`: itself if it holds task files, otherwise
/// its sub-directories that do, in name order.
pub fn expand_task_dirs(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.join(ctxext_core::dataset::QUERIES_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(ctxext_core::dataset::QUERIES_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(ctxext_core::Error::Validation(format!("no task files under {}", path.display())).into());
    }
    Ok(dirs)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestArgs {
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Copy the validated task into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_ingest(args: IngestArgs) -> CliResult<()> {
    let (task, stats): (RetrievalTask, _) = ingest_real_task(
        required(&args.queries, "queries")?,
        required(&args.corpus, "corpus")?,
        required(&args.qrels, "qrels")?,
    )?;
    if let Some(out) = &args.out {
        task.write_dir(out)?;
    }
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
