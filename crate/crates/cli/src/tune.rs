use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use ctxext_core::checkpoint;
use ctxext_core::encoder::PositionMode;
use ctxext_core::tuner::{tune, TuneConfig, TuneError, TuneMode};
use ctxext_core::Error;

use crate::error::{required, CliResult};
use crate::model::{load_pairs, log_path};
use crate::{parse_setting, Invocation};

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneArgs {
    /// Absolute-position checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSONL training triples.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// pi_anchored or rp_suffix.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub target_context: Option<usize>,
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
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training log (TSV); defaults to `<out>.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn run(mut args: TuneArgs, inv: &Invocation) -> CliResult<()> {
    let model = checkpoint::load(required(&args.model, "model")?)?;
    if model.position_mode() != PositionMode::Absolute {
        return Err(Error::Mode("further tuning requires absolute-position mode".into()).into());
    }
    let mode: TuneMode = parse_setting("mode", args.mode.get_or_insert_with(|| "pi_anchored".into()))?;
    let target = *required(&args.target_context, "target_context")?;
    let defaults = TuneConfig::new(mode, model.original_context(), target);
    let pairs = load_pairs(&model, required(&args.data, "data")?)?;
    let config = TuneConfig {
        learning_rate: *args.learning_rate.get_or_insert(defaults.learning_rate),
        batch_size: *args.batch_size.get_or_insert(defaults.batch_size),
        epochs: *args.epochs.get_or_insert(defaults.epochs),
        warmup_steps: *args.warmup_steps.get_or_insert(defaults.warmup_steps),
        temperature: *args.temperature.get_or_insert(defaults.temperature),
        negatives: pairs.first().map_or(defaults.negatives, |p| p.negatives.len().max(1)),
        seed: *args.seed.get_or_insert(42),
        max_steps: args.max_steps,
        ..defaults
    };
    let out = required(&args.out, "out")?.clone();
    let log_file = log_path(&out, args.log.as_ref());
    log::info!("tune settings: {}", inv.snapshot(&args));

    match tune(&model, &pairs, &config) {
        Ok(outcome) => {
            checkpoint::save(&outcome.model, &out)?;
            fs::write(&log_file, outcome.log.to_tsv())?;
            let frozen = outcome.model.extended_table().map_or(0, |e| e.table.frozen_count());
            println!(
                "{} steps; extended table frozen rows: {frozen}; checkpoint written to {}",
                outcome.log.entries.len(),
                out.display()
            );
            Ok(())
        }
        Err(TuneError::Diverged { step, last_good, log }) => {
            checkpoint::save(&last_good, &out)?;
            fs::write(&log_file, log.to_tsv())?;
            Err(Error::Numeric(format!(
                "tuning diverged at step {step}; last good checkpoint written to {}",
                out.display()
            ))
            .into())
        }
        Err(TuneError::Invalid(e)) => Err(e.into()),
    }
}
