//! `traj generate`: roll out solvers over a QA dataset and export training
//! trajectories. Three modes:
//!
//! - `single`: one plain rollout per item; every trajectory is exported.
//! - `multi`: planner/search/verifier roles produce a verified trace per
//!   item; only traces whose final answer passed verification are exported,
//!   flattened to the single-agent trajectory format.
//! - `reflect`: a deliberately hasty first attempt, then one reflection
//!   retry; only composites whose revised answer passed are exported.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};
use veriseek_core::multi_agent::{
    flatten_to_react, reflect_rerollout, run_verified_trace, write_traces, MultiAgentTrace,
    RolePolicies, TraceConfig,
};
use veriseek_core::runtime::policy::SimSolverPolicy;
use veriseek_core::runtime::tools::ToolLayer;
use veriseek_core::runtime::{run_rollout, write_trajectories, RolloutConfig, Trajectory};
use veriseek_core::synth::read_dataset;
use veriseek_core::tts::SOLVER_PROMPT;
use veriseek_core::world::load_fixture;
use veriseek_core::{Error, Result};

use crate::config::FileConfig;
use crate::policies::{self, PlannerPolicy, PolicyKind};

use super::open_output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrajMode {
    /// Plain single-agent rollouts; everything is exported.
    Single,
    /// Verified multi-role traces; only passing traces are exported.
    Multi,
    /// Reflection composites; only recovered failures are exported.
    Reflect,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// QA dataset path.
    #[arg(long, value_name = "PATH")]
    pub qa: PathBuf,
    /// World fixture the questions were synthesized from.
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    /// Rollout strategy.
    #[arg(long, value_enum)]
    pub mode: TrajMode,
    /// Which backend powers the solver/search/verifier roles.
    #[arg(long, value_enum, default_value_t = PolicyKind::Scripted)]
    pub policy: PolicyKind,
    /// Tool-call budget per rollout.
    #[arg(long, default_value_t = 60)]
    pub budget: usize,
    /// Trajectory output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write the raw multi-agent traces here (multi mode only).
    #[arg(long, value_name = "PATH")]
    pub traces: Option<PathBuf>,
}

fn trace_config(budget: usize) -> TraceConfig {
    TraceConfig {
        max_revisions: 2,
        rollout_budget: budget,
        max_steps: budget + 2,
    }
}

pub fn generate(args: GenerateArgs, file: &FileConfig) -> Result<()> {
    if args.traces.is_some() && args.mode != TrajMode::Multi {
        return Err(Error::invalid("--traces only applies to --mode multi"));
    }
    let items = read_dataset(BufReader::new(File::open(&args.qa)?))?;
    let world = Arc::new(load_fixture(&args.graph)?);
    let tools = ToolLayer::for_world(world);
    let solver = policies::solver(args.policy, file)?;
    let config = trace_config(args.budget);

    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut kept_traces: Vec<MultiAgentTrace> = Vec::new();
    let total = items.len();
    for item in &items {
        match args.mode {
            TrajMode::Single => {
                let rollout_config = RolloutConfig {
                    max_steps: config.max_steps,
                    tool_budget: config.rollout_budget,
                    max_resets: 0,
                };
                trajectories.push(run_rollout(
                    solver.as_ref(),
                    &tools,
                    SOLVER_PROMPT,
                    &item.question,
                    rollout_config,
                )?);
            }
            TrajMode::Multi => {
                let verifier = policies::verifier(args.policy, file)?;
                let roles = RolePolicies {
                    main: &PlannerPolicy,
                    search: solver.as_ref(),
                    verifier: verifier.as_ref(),
                };
                let trace = run_verified_trace(&roles, &tools, &item.question, &config)?;
                if trace.accepted_for_training() {
                    trajectories.push(flatten_to_react(&trace));
                    kept_traces.push(trace);
                }
            }
            TrajMode::Reflect => {
                let hasty = SimSolverPolicy::hasty();
                let verifier = policies::verifier(args.policy, file)?;
                let rollout_config = RolloutConfig {
                    max_steps: config.max_steps,
                    tool_budget: config.rollout_budget,
                    max_resets: 0,
                };
                let failed = run_rollout(
                    &hasty,
                    &tools,
                    SOLVER_PROMPT,
                    &item.question,
                    rollout_config,
                )?;
                match reflect_rerollout(
                    solver.as_ref(),
                    verifier.as_ref(),
                    &tools,
                    &failed,
                    &config,
                ) {
                    Ok(Some(composite)) => trajectories.push(composite),
                    // Unrecoverable failure: no exportable composite.
                    Ok(None) => {}
                    // The hasty attempt was already judged correct.
                    Err(Error::InvalidArgument(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let out = open_output(args.out.as_deref())?;
    write_trajectories(out, &trajectories)?;
    if let Some(path) = &args.traces {
        write_traces(std::io::BufWriter::new(File::create(path)?), &kept_traces)?;
    }
    if args.out.is_some() {
        let mode = match args.mode {
            TrajMode::Single => "single",
            TrajMode::Multi => "multi",
            TrajMode::Reflect => "reflect",
        };
        println!("exported {} of {} items ({mode} mode)", trajectories.len(), total);
    }
    Ok(())
}
