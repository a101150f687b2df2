//! `synth graph` and `synth agent`: QA dataset synthesis over a fixture.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use veriseek_core::synth::graph::{AdversarialConfig, EntityFilters};
use veriseek_core::synth::{self, write_dataset};
use veriseek_core::world::load_fixture;
use veriseek_core::Result;

use super::open_output;

#[derive(Args)]
pub struct GraphArgs {
    /// World fixture path.
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    /// Number of items to synthesize.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Minimum constraints per question.
    #[arg(long, default_value_t = 3)]
    pub min_constraints: usize,
    /// Maximum uniqueness-tightening rounds per item.
    #[arg(long, default_value_t = 10)]
    pub max_rounds: usize,
    /// Dataset output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn graph(args: GraphArgs, seed: u64) -> Result<()> {
    let world = load_fixture(&args.graph)?;
    let config = AdversarialConfig {
        min_constraints: args.min_constraints,
        max_rounds: args.max_rounds,
    };
    let items =
        synth::graph::synthesize_dataset(&world, &EntityFilters::default(), &config, args.n, seed)?;
    let out = open_output(args.out.as_deref())?;
    write_dataset(out, &items)?;
    if let Some(path) = &args.out {
        println!("synthesized {} items -> {}", items.len(), path.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct AgentArgs {
    /// World fixture path.
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    /// Number of verified items to synthesize.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Tool-call budget per item (exploration plus verification).
    #[arg(long, default_value_t = 60)]
    pub budget: usize,
    /// Dataset output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn agent(args: AgentArgs, seed: u64) -> Result<()> {
    let world = Arc::new(load_fixture(&args.graph)?);
    let items = synth::agent::synthesize_dataset(&world, args.n, args.budget, seed)?;
    let out = open_output(args.out.as_deref())?;
    write_dataset(out, &items)?;
    if let Some(path) = &args.out {
        println!("synthesized {} items -> {}", items.len(), path.display());
    }
    Ok(())
}
