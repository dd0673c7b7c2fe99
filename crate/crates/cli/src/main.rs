mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Audit a text corpus for entity association: index co-occurrences, score
/// pairs, probe a model, judge its answers and report accuracy curves.
#[derive(Debug, Parser)]
#[command(name = "aesaudit", version, propagate_version = true)]
struct Cli {
    /// JSON run configuration; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for all outputs
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Print errors as JSON on stderr
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Extract entities from the corpus and write the occurrence index
    Index,
    /// Score every pair with the Association Easiness Score
    Score,
    /// Render prompts for every pair and query the model
    Probe,
    /// Judge probe records and summarize accuracy
    Eval,
    /// Write accuracy curves and the summary table
    Report,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or missing inputs.
    Usage(String),
    /// The pipeline itself failed.
    Pipeline(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Pipeline(_) => "pipeline",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Pipeline(e) => format!("{e:#}"),
        }
    }
}

impl From<aesaudit::Error> for CliError {
    fn from(e: aesaudit::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&cli.overrides, cli.output_dir.as_deref())?;
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Usage(format!("cannot create {}: {e}", cfg.output_dir.display()))
    })?;
    let result = match cli.command {
        Command::Index => commands::index(&cfg),
        Command::Score => commands::score(&cfg),
        Command::Probe => commands::probe(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Report => commands::report(&cfg),
    };
    // usage errors stop before any output is written
    if !matches!(result, Err(CliError::Usage(_))) {
        cfg.snapshot(&cfg.output_dir, "effective-config.json")?;
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let json = std::env::args().any(|a| a == "--json-errors");
            if json && e.use_stderr() {
                let body = serde_json::json!({
                    "error": {"kind": "usage", "message": e.to_string().trim(), "exit_code": 2}
                });
                eprintln!("{body}");
                return ExitCode::from(2);
            }
            e.exit();
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json_errors {
                let body = serde_json::json!({
                    "error": {"kind": e.kind(), "message": e.message(), "exit_code": e.exit_code()}
                });
                eprintln!("{body}");
            } else {
                eprintln!("error: {}", e.message());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
