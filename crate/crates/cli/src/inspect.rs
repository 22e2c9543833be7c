use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ctxext_core::encoder::{PositionMode, RoPEFrequencies, DEFAULT_ROPE_BASE};
use ctxext_core::position::{ntk_frequencies, plan_positions};

use crate::error::CliResult;
use crate::eval::SpecArgs;
use crate::parse_setting;

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct InspectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    /// absolute or rotary.
    #[arg(long)]
    pub position_mode: Option<String>,
    #[arg(long)]
    pub original_context: Option<usize>,
    /// Input length to plan; defaults to the target context.
    #[arg(long)]
    pub len: Option<usize>,
    /// Rotary head dimension for the frequency dump.
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub rope_base: Option<f64>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(mut args: InspectArgs) -> CliResult<()> {
    let l_o = *args.original_context.get_or_insert(512);
    args.spec.resolve(l_o);
    let mode: PositionMode = parse_setting("position_mode", args.position_mode.get_or_insert_with(|| "rotary".into()))?;
    let head_dim = *args.head_dim.get_or_insert(64);
    let base = *args.rope_base.get_or_insert(DEFAULT_ROPE_BASE);
    let spec = args.spec.build(l_o)?;
    let len = *args.len.get_or_insert(spec.target_context());

    let plan = plan_positions(&spec, mode, len)?;
    let frequencies = match mode {
        PositionMode::Absolute => None,
        PositionMode::Rotary => Some(match spec.ntk_lambda() {
            Some(lambda) => ntk_frequencies(head_dim, base, lambda)?,
            None => RoPEFrequencies::new(head_dim, base)?,
        }),
    };
    let dump = json!({
        "settings": args,
        "strategy": spec.strategy(),
        "scale": spec.scale(),
        "ntk_lambda": spec.ntk_lambda(),
        "self_extend": spec.self_extend(),
        "notes": spec.notes(),
        "attention_multiplier": spec.attention_multiplier(len),
        "thetas": frequencies.as_ref().map(|f| f.thetas().to_vec()),
        "plan": plan,
    });
    let text = serde_json::to_string_pretty(&dump)? + "\n";
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
