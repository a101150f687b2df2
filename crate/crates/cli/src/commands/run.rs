//! `run`: one solver rollout against a world fixture.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use veriseek_core::runtime::tools::ToolLayer;
use veriseek_core::runtime::{run_rollout, write_trajectories, RolloutConfig};
use veriseek_core::tts::SOLVER_PROMPT;
use veriseek_core::world::load_fixture;
use veriseek_core::Result;

use crate::config::FileConfig;
use crate::policies::{self, PolicyKind};

use super::open_output;

#[derive(Args)]
pub struct RunArgs {
    /// World fixture path.
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    /// Which backend answers the query.
    #[arg(long, value_enum, default_value_t = PolicyKind::Scripted)]
    pub policy: PolicyKind,
    /// The question to answer.
    #[arg(long, value_name = "Q")]
    pub query: String,
    /// Tool-call budget for the rollout.
    #[arg(long, default_value_t = 600)]
    pub budget: usize,
    /// Maximum reasoning steps per segment.
    #[arg(long, default_value_t = 20)]
    pub max_steps: usize,
    /// Trajectory output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn run(args: RunArgs, file: &FileConfig) -> Result<()> {
    let world = Arc::new(load_fixture(&args.graph)?);
    let tools = ToolLayer::for_world(world);
    let solver = policies::solver(args.policy, file)?;
    let config = RolloutConfig {
        max_steps: args.max_steps,
        tool_budget: args.budget,
        max_resets: 0,
    };
    let trajectory = run_rollout(solver.as_ref(), &tools, SOLVER_PROMPT, &args.query, config)?;
    let answer = trajectory.final_answer().unwrap_or("(no answer)").to_string();
    let tool_calls = trajectory.tool_calls_used;
    let out = open_output(args.out.as_deref())?;
    write_trajectories(out, std::slice::from_ref(&trajectory))?;
    if args.out.is_some() {
        println!("answer: {answer} (tool calls: {tool_calls})");
    }
    Ok(())
}
