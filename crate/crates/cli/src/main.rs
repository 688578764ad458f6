//! `shh`: label, export, route, and evaluate action-token runs.
//!
//! Exit codes: 0 on success, 1 when per-sample errors were recorded in a
//! sidecar, 2 on fatal configuration/schema errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "shh", version, about = "Agentic arbitration harness for speech and audio tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset JSONL of samples.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; overrides the config value.
    #[arg(long)]
    workers: Option<usize>,
    /// Abort on the first per-sample error instead of writing a sidecar.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build oracle action-token labels and SFT targets for a dataset.
    Label(LabelArgs),
    /// Serialize labeled examples into SFT export JSONL.
    FormatSft(FormatSftArgs),
    /// Route a dataset through the action space and write traces.
    Route(RouteArgs),
    /// Score traces: WER/accuracy tables, token P/R/F1, confusion.
    Eval(EvalArgs),
    /// Best-candidate oracle bound over labeled hypotheses.
    Oracle(OracleArgs),
    /// Re-render a stored report into CSV and text tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct FormatSftArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled-example JSONL produced by `shh label`.
    #[arg(long)]
    labeled: PathBuf,
}

#[derive(Args)]
struct RouteArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trace JSONL produced by `shh route`.
    #[arg(long)]
    traces: PathBuf,
    /// Optional labeled JSONL; enables token metrics, confusion, and
    /// oracle bounds.
    #[arg(long)]
    labeled: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled JSONL carrying the hypothesis sets and gold answers.
    #[arg(long)]
    labeled: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Stored report JSON produced by `shh eval`.
    #[arg(long)]
    report: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Label(args) => commands::label(&args.common),
        Command::FormatSft(args) => commands::format_sft(&args.common, &args.labeled),
        Command::Route(args) => commands::route(&args.common),
        Command::Eval(args) => commands::eval(&args.common, &args.traces, args.labeled.as_deref()),
        Command::Oracle(args) => commands::oracle(&args.common, &args.labeled),
        Command::Report(args) => commands::report(&args.report, &args.out),
    };
    match result {
        Ok(had_sample_errors) => {
            if had_sample_errors {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

impl CommonArgs {
    /// Load the config with CLI overrides applied.
    fn load_config(&self) -> anyhow::Result<shh_core::RunConfig> {
        let mut config = shh_core::RunConfig::load(&self.config)?;
        if let Some(workers) = self.workers {
            anyhow::ensure!(workers >= 1, "--workers must be >= 1");
            config.workers = workers;
        }
        if self.strict {
            config.strict = true;
        }
        Ok(config)
    }
}
