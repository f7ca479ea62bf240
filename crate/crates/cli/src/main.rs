//! `faultline`: build fault-injected multi-agent datasets and score
//! attribution predictions.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "faultline", version, about = "Fault injection and error attribution for multi-agent LLM systems")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model backend: `mock:<rule>` (echo, inject-marker, corrupt-number,
    /// fixed-answer=TEXT, scripted=PATH) or `remote`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub seed_plans: Option<u64>,
    #[arg(long, global = true)]
    pub seed_splits: Option<u64>,
    #[arg(long, global = true)]
    pub seed_sim: Option<u64>,
    /// Worker threads for pipeline jobs (default 4).
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every scenario on every task and keep the successful baselines.
    Simulate(commands::SimulateArgs),
    /// Sample injection plans for each baseline.
    Plan(commands::PlanArgs),
    /// Re-run baselines with the manipulator armed, one candidate per plan.
    Inject(commands::InjectArgs),
    /// Validate and label candidates, write the dataset and its manifest.
    Build(commands::BuildArgs),
    /// Split a dataset into test/train/val.
    Split(commands::SplitArgs),
    /// Recompute the manifest for an existing dataset.
    Stats(commands::StatsArgs),
    /// Map free-text failure reasons to error-mode codes.
    Normalize(commands::NormalizeArgs),
    /// Score predictions with the hierarchical reward.
    Score(commands::ScoreArgs),
    /// Group-normalized advantages for tagged rewards.
    Advantages(commands::AdvantagesArgs),
    /// Attribution metrics for a predictions file or a zero-shot run.
    Eval(commands::EvalArgs),
    /// Check the contrastive model math against the reference evaluator.
    DclCheck(commands::DclCheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.global)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Plan(a) => commands::plan(&cfg, a),
        Command::Inject(a) => commands::inject(&cfg, a),
        Command::Build(a) => commands::build(&cfg, a),
        Command::Split(a) => commands::split(&cfg, a),
        Command::Stats(a) => commands::stats(&cfg, a),
        Command::Normalize(a) => commands::normalize(&cfg, a),
        Command::Score(a) => commands::score(&cfg, a),
        Command::Advantages(a) => commands::advantages(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::DclCheck(a) => commands::dcl_check(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
