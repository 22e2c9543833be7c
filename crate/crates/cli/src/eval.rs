use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use ctxext_core::checkpoint;
use ctxext_core::dataset::RetrievalTask;
use ctxext_core::eval::{run_benchmark, BenchmarkTask, Metric, ModelEmbedder};
use ctxext_core::position::{ExtensionSpec, Strategy};

use crate::error::{required, CliError, CliResult};
use crate::gen::{expand_task_dirs, TaskMeta, TASK_META_FILE};
use crate::{parse_setting, Invocation};

/// Extension-spec settings shared by `eval` and `inspect`.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecArgs {
    /// none, pcw, gp, rp, pi, ntk, se, tuned_pi or tuned_rp.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub target_context: Option<usize>,
    /// Overrides the tabulated NTK multiplier.
    #[arg(long)]
    pub ntk_lambda: Option<f64>,
    /// SelfExtend group size; needs --se-window.
    #[arg(long)]
    pub se_group: Option<usize>,
    /// SelfExtend neighbor window; needs --se-group.
    #[arg(long)]
    pub se_window: Option<usize>,
    /// Length-dependent attention logit scaling beyond the original context.
    #[arg(long)]
    pub attention_scaling: Option<bool>,
}

impl SpecArgs {
    pub fn resolve(&mut self, original_context: usize) {
        self.strategy.get_or_insert_with(|| "none".into());
        self.target_context.get_or_insert(original_context);
        self.attention_scaling.get_or_insert(true);
    }

    /// Builds the spec, failing before any encoding on bad parameters.
    pub fn build(&self, original_context: usize) -> CliResult<ExtensionSpec> {
        let strategy: Strategy = parse_setting("strategy", self.strategy.as_deref().unwrap_or("none"))?;
        let target = self.target_context.unwrap_or(original_context);
        let mut spec = ExtensionSpec::new(strategy, original_context, target)?;
        if let Some(lambda) = self.ntk_lambda {
            spec = spec.with_ntk_lambda(lambda)?;
        }
        spec = match (self.se_group, self.se_window) {
            (Some(g), Some(w)) => spec.with_self_extend(g, w)?,
            (None, None) => spec,
            _ => return Err(CliError::config("se_group and se_window must be given together")),
        };
        Ok(spec.with_attention_scaling(self.attention_scaling.unwrap_or(true)))
    }
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    /// Cut inputs to this many tokens before encoding.
    #[arg(long)]
    pub truncate_to: Option<usize>,
    /// Task directories, or directories of task directories.
    #[arg(long, num_args = 1..)]
    pub tasks: Option<Vec<PathBuf>>,
    /// acc@1 or ndcg@10; overrides the per-task metric.
    #[arg(long)]
    pub metric: Option<String>,
    /// Recorded in the report.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_tasks(paths: &[PathBuf], metric: Option<Metric>) -> CliResult<Vec<BenchmarkTask>> {
    let mut tasks = Vec::new();
    for path in paths {
        for dir in expand_task_dirs(path)? {
            let meta_path = dir.join(TASK_META_FILE);
            let meta: Option<TaskMeta> = if meta_path.is_file() {
                Some(serde_json::from_str(&fs::read_to_string(&meta_path)?)?)
            } else {
                None
            };
            let name = meta.as_ref().map_or_else(
                || dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
                |m| m.name.clone(),
            );
            tasks.push(BenchmarkTask {
                name,
                metric: metric.or(meta.as_ref().map(|m| m.metric)).unwrap_or(Metric::NdcgAt10),
                length: meta.and_then(|m| m.length),
                task: RetrievalTask::read_dir(&dir)?,
            });
        }
    }
    Ok(tasks)
}

pub fn run(mut args: EvalArgs, inv: &Invocation) -> CliResult<()> {
    let model = checkpoint::load(required(&args.model, "model")?)?;
    args.spec.resolve(model.original_context());
    args.seed.get_or_insert(42);
    args.out.get_or_insert_with(|| PathBuf::from("eval_report.json"));
    let spec = args.spec.build(model.original_context())?;
    let metric = args.metric.as_deref().map(|m| parse_setting("metric", m)).transpose()?;
    let tasks = load_tasks(required(&args.tasks, "tasks")?, metric)?;

    let mut embedder = ModelEmbedder::new(&model, spec)?;
    if let Some(max) = args.truncate_to {
        embedder = embedder.with_truncation(max);
    }
    let mut report = run_benchmark(&embedder, &tasks)?;
    report.tool_version = env!("CARGO_PKG_VERSION").to_string();
    report.timestamp = Some(chrono::Utc::now().to_rfc3339());
    report.seed = args.seed;
    report.config = inv.snapshot(&args);
    report.recompute_average();

    let out = required(&args.out, "out")?;
    fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{}", report.summary_table());
    println!("report written to {}", out.display());
    Ok(())
}
