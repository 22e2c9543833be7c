use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ctxext_core::checkpoint;
use ctxext_core::dataset::{read_jsonl, write_jsonl, TextTriple};
use ctxext_core::encoder::{init_model, Model, ModelConfig, PositionMode, DEFAULT_ROPE_BASE};
use ctxext_core::synth::{training_triples, Essay, TaskKind, TripleConfig};
use ctxext_core::tokenizer::Tokenizer;
use ctxext_core::tuner::{train_contrastive, TrainConfig, TrainingPair};

use crate::error::{required, CliResult};
use crate::parse_setting;

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct InitArgs {
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub ffn_multiplier: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub original_context: Option<usize>,
    /// absolute or rotary.
    #[arg(long)]
    pub position_mode: Option<String>,
    #[arg(long)]
    pub rope_base: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_init(args: InitArgs) -> CliResult<()> {
    let mode: PositionMode = parse_setting("position_mode", args.position_mode.as_deref().unwrap_or("absolute"))?;
    let config = ModelConfig {
        hidden_size: args.hidden_size.unwrap_or(64),
        n_layers: args.n_layers.unwrap_or(2),
        n_heads: args.n_heads.unwrap_or(4),
        ffn_multiplier: args.ffn_multiplier.unwrap_or(4),
        vocab_size: args.vocab_size.unwrap_or(4096),
        original_context: args.original_context.unwrap_or(128),
        position_mode: mode,
        init_seed: args.seed.unwrap_or(42),
        rope_base: args.rope_base.unwrap_or(DEFAULT_ROPE_BASE),
    };
    let out = required(&args.out, "out")?;
    let model = init_model(&config)?;
    checkpoint::save(&model, out)?;
    println!("{}", serde_json::to_string_pretty(&config)?);
    println!("checkpoint written to {}", out.display());
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TriplesArgs {
    /// passkey or needle.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long)]
    pub max_words: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plain-text haystack for needle triples.
    #[arg(long)]
    pub essay_path: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_triples(args: TriplesArgs) -> CliResult<()> {
    let config = TripleConfig {
        kind: parse_setting::<TaskKind>("kind", args.kind.as_deref().unwrap_or("passkey"))?,
        count: args.count.unwrap_or(1000),
        min_words: args.min_words.unwrap_or(16),
        max_words: args.max_words.unwrap_or(120),
        negatives: args.negatives.unwrap_or(3),
        seed: args.seed.unwrap_or(42),
    };
    let essay = match &args.essay_path {
        Some(p) => Some(Essay::from_text(&fs::read_to_string(p)?)?),
        None => None,
    };
    let out = required(&args.out, "out")?;
    let triples = training_triples(&config, essay.as_ref())?;
    write_jsonl(out, &triples)?;
    println!("wrote {} triples to {}", triples.len(), out.display());
    Ok(())
}

/// Reads JSONL triples and tokenizes them for `model`, truncating every
/// text to the model's original context.
pub fn load_pairs(model: &Model, path: &Path) -> CliResult<Vec<TrainingPair>> {
    let tokenizer = Tokenizer::new(model.config().vocab_size)?;
    let triples: Vec<TextTriple> = read_jsonl(path)?;
    Ok(triples
        .iter()
        .map(|t| t.tokenize(&tokenizer, model.original_context()))
        .collect::<ctxext_core::Result<_>>()?)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSONL training triples.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Score each query against every document in its batch.
    #[arg(long)]
    pub in_batch_negatives: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training log (TSV); defaults to `<out>.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn log_path(out: &Path, log: Option<&PathBuf>) -> PathBuf {
    log.cloned().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".log.tsv");
        PathBuf::from(name)
    })
}

pub fn run_train(args: TrainArgs) -> CliResult<()> {
    let model = checkpoint::load(required(&args.model, "model")?)?;
    let pairs = load_pairs(&model, required(&args.data, "data")?)?;
    let out = required(&args.out, "out")?;
    let config = TrainConfig {
        learning_rate: args.learning_rate.unwrap_or(3e-4),
        batch_size: args.batch_size.unwrap_or(16),
        epochs: args.epochs.unwrap_or(1),
        warmup_steps: args.warmup_steps.unwrap_or(10),
        temperature: args.temperature.unwrap_or(0.05),
        seed: args.seed.unwrap_or(42),
        max_steps: args.max_steps,
        in_batch_negatives: args.in_batch_negatives.unwrap_or(true),
    };
    let (trained, log) = train_contrastive(&model, &pairs, &config)?;
    checkpoint::save(&trained, out)?;
    fs::write(log_path(out, args.log.as_ref()), log.to_tsv())?;
    if let (Some(first), Some(last)) = (log.entries.first(), log.entries.last()) {
        println!("{} steps, loss {:.4} -> {:.4}", log.entries.len(), first.loss, last.loss);
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}
