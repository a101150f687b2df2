//! `veriseek`: command-line front end over the research-agent engine —
//! world fixtures, QA synthesis, rollouts, trace generation, test-time
//! scaling, judging, training diagnostics, and analytics.

mod commands;
mod config;
mod policies;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use veriseek_core::Result;

#[derive(Parser)]
#[command(
    name = "veriseek",
    version,
    about = "verification-centric research-agent engine"
)]
struct Cli {
    /// Base seed for seeded subcommands (overrides the config file; default 0).
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Structured TOML config file (seed, log level, remote backend, judge, grpo).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Log filter: error, warn, info, debug, or trace (overrides the config file).
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build synthetic world fixtures.
    #[command(subcommand)]
    World(WorldCommand),
    /// Synthesize QA datasets from a world fixture.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run one solver rollout against a world fixture.
    Run(commands::run::RunArgs),
    /// Generate training trajectories from a QA dataset.
    #[command(subcommand)]
    Traj(TrajCommand),
    /// Verifier-guided test-time scaling over one query.
    Tts(commands::tts::TtsArgs),
    /// Judge solver outputs against references.
    Judge(commands::judge::JudgeArgs),
    /// Group-relative training-objective diagnostics.
    #[command(subcommand)]
    Grpo(GrpoCommand),
    /// Trajectory and dataset analytics.
    Stats(commands::stats::StatsArgs),
}

#[derive(Subcommand)]
enum WorldCommand {
    /// Generate a world fixture deterministically from the seed.
    Generate(commands::world::GenerateArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Graph-based synthesis: sample an answer entity, tighten constraints
    /// until unique.
    Graph(commands::synth::GraphArgs),
    /// Agentic synthesis: explore with tools, then construct and verify.
    Agent(commands::synth::AgentArgs),
}

#[derive(Subcommand)]
enum TrajCommand {
    /// Roll out solvers over a QA dataset and export trajectories.
    Generate(commands::traj::GenerateArgs),
}

#[derive(Subcommand)]
enum GrpoCommand {
    /// Compute objective components per rollout group from a batch file.
    Check(commands::grpo::CheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let level = cli
        .log_level
        .as_deref()
        .or(file.log_level.as_deref())
        .unwrap_or("warn");
    let _ = env_logger::Builder::new().parse_filters(level).try_init();
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::World(WorldCommand::Generate(args)) => commands::world::generate(args, seed),
        Command::Synth(SynthCommand::Graph(args)) => commands::synth::graph(args, seed),
        Command::Synth(SynthCommand::Agent(args)) => commands::synth::agent(args, seed),
        Command::Run(args) => commands::run::run(args, &file),
        Command::Traj(TrajCommand::Generate(args)) => commands::traj::generate(args, &file),
        Command::Tts(args) => commands::tts::run(args, &file, seed),
        Command::Judge(args) => commands::judge::run(args, &file),
        Command::Grpo(GrpoCommand::Check(args)) => commands::grpo::check(args, &file),
        Command::Stats(args) => commands::stats::run(args),
    }
}
