//! `retrolola`: run monitors over event traces, cross-check evaluators, and
//! generate and summarize synthetic flow traffic.

mod run;
mod traffic;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "retrolola", version, about = "Stream runtime verification with retroactive parametrization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monitor a trace. Exit 0: no violation, 1: violation, 2: error.
    Run(RunArgs),
    /// Evaluate a trace online and offline and report the first difference.
    OracleCheck(CheckArgs),
    /// Write a synthetic flow trace and its ground truth.
    GenTraffic(GenArgs),
    /// Write one summary event per batch of a flow trace.
    Summarize(SummarizeArgs),
    /// List the builtin specifications.
    List,
}

#[derive(clap::Args)]
pub struct SpecArgs {
    /// Builtin name or path to a JSON specification.
    #[arg(long)]
    pub spec: String,
    /// Event trace, one wire-format line per event; `-` reads standard input.
    #[arg(long)]
    pub input: String,
    /// Read-only log of another trace that retrievals run against (e.g. the
    /// flows behind a summary trace).
    #[arg(long)]
    pub past: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Directory holding the monitor's own log (`trace.log`). Must not
    /// contain a non-empty log already.
    #[arg(long)]
    pub log_store: Option<PathBuf>,
    /// Adapter command for retrievals. Serves initializers with an external
    /// source and replaces in-process reads of `--past`.
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Verdicts)]
    pub output: OutputFormat,
    /// Write a JSON report of verdicts, violations and counters.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    /// Every output value, one line per instant.
    Full,
    /// Violations and the final verdict only.
    Verdicts,
}

#[derive(clap::Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(clap::Args)]
pub struct GenArgs {
    #[arg(long)]
    pub profile: retrolola_core::ddos::Profile,
    /// Flows in total (per batch for d4).
    #[arg(long)]
    pub flows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flow trace; the ground truth goes to `<out>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run::cmd_run(&a),
        Command::OracleCheck(a) => run::cmd_oracle_check(&a),
        Command::GenTraffic(a) => traffic::cmd_gen_traffic(&a).map(|()| run::Status::Clean),
        Command::Summarize(a) => traffic::cmd_summarize(&a).map(|()| run::Status::Clean),
        Command::List => {
            for b in retrolola_core::builtins::all() {
                println!("{:<16} {}", b.name, b.about);
            }
            Ok(run::Status::Clean)
        }
    };
    match result {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("retrolola: {e:#}");
            ExitCode::from(2)
        }
    }
}
