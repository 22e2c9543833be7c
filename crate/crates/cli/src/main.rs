mod config;
mod error;
mod eval;
mod gen;
mod inspect;
mod model;
mod tune;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use config::ConfigFile;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "ctxext", version, about = "Context-window extension for embedding encoders")]
struct Cli {
    /// TOML file with settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic passkey or needle task buckets.
    Gen(gen::GenArgs),
    /// Score a checkpoint on task directories under an extension strategy.
    Eval(eval::EvalArgs),
    /// Further-tune the extended position table of an absolute-position model.
    Tune(tune::TuneArgs),
    /// Dump the position map and frequencies a strategy produces.
    Inspect(inspect::InspectArgs),
    /// Validate a BEIR-style task and print its statistics.
    Ingest(gen::IngestArgs),
    /// Create a freshly initialized checkpoint.
    Init(model::InitArgs),
    /// Train every weight of a checkpoint contrastively at its native context.
    Train(model::TrainArgs),
    /// Write synthetic contrastive training triples as JSONL.
    Triples(model::TriplesArgs),
}

/// Settings snapshot recorded in reports and manifests.
pub struct Invocation {
    pub command: &'static str,
    pub config_file: Option<PathBuf>,
}

impl Invocation {
    pub fn snapshot(&self, settings: &impl serde::Serialize) -> serde_json::Value {
        serde_json::json!({
            "command": self.command,
            "config_file": self.config_file,
            "settings": settings,
            "tool_version": env!("CARGO_PKG_VERSION"),
        })
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let inv = |command| Invocation {
        command,
        config_file: cli.config.clone(),
    };
    match cli.command {
        Command::Gen(a) => gen::run_gen(file.apply("gen", a)?, &inv("gen")),
        Command::Eval(a) => eval::run(file.apply("eval", a)?, &inv("eval")),
        Command::Tune(a) => tune::run(file.apply("tune", a)?, &inv("tune")),
        Command::Inspect(a) => inspect::run(file.apply("inspect", a)?),
        Command::Ingest(a) => gen::run_ingest(file.apply("ingest", a)?),
        Command::Init(a) => model::run_init(file.apply("init", a)?),
        Command::Train(a) => model::run_train(file.apply("train", a)?),
        Command::Triples(a) => model::run_triples(file.apply("triples", a)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

/// Parses an enum-like setting, reporting failures as configuration errors.
pub fn parse_setting<T>(key: &str, value: &str) -> CliResult<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| error::CliError::config(format!("invalid `{key}`: {e}")))
}
