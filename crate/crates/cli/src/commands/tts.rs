//! `tts`: verifier-guided test-time scaling over one query, with a
//! JSONL report of candidates, verdicts, and the final selection.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use serde::Serialize;
use veriseek_core::runtime::tools::ToolLayer;
use veriseek_core::tts::{tts_run, write_report, TtsConfig, TtsOutcome};
use veriseek_core::world::load_fixture;
use veriseek_core::Result;

use crate::config::FileConfig;
use crate::policies::{self, PolicyKind};

use super::open_output;

#[derive(Args)]
pub struct TtsArgs {
    /// World fixture path.
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    /// The question to answer.
    #[arg(long, value_name = "Q")]
    pub query: String,
    /// Cumulative tool-call budget across all segments.
    #[arg(long, default_value_t = 600)]
    pub t_max: usize,
    /// Independent trials to run (each gets its own derived seed label).
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Consecutive identical verified answers required to stop early.
    #[arg(long, default_value_t = 2)]
    pub convergence_k: usize,
    /// Maximum reasoning steps per segment.
    #[arg(long, default_value_t = 20)]
    pub max_steps: usize,
    /// Exclude verifier tool calls from the cumulative budget.
    #[arg(long)]
    pub no_meter_verifier: bool,
    /// Which backend powers the solver and verifier roles.
    #[arg(long, value_enum, default_value_t = PolicyKind::Scripted)]
    pub policy: PolicyKind,
    /// Report output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    query: &'a str,
    trials: usize,
    base_seed: u64,
    answered: usize,
    converged: usize,
    modal_answer: Option<&'a str>,
}

fn modal_answer(outcomes: &[TtsOutcome]) -> Option<&str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for outcome in outcomes {
        if let Some(answer) = outcome.final_answer.as_deref() {
            *counts.entry(answer).or_insert(0) += 1;
        }
    }
    // BTreeMap iteration breaks count ties lexicographically.
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(answer, _)| answer)
}

pub fn run(args: TtsArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let world = Arc::new(load_fixture(&args.graph)?);
    let tools = ToolLayer::for_world(world);
    let solver = policies::solver(args.policy, file)?;
    let verifier = policies::verifier(args.policy, file)?;
    let config = TtsConfig {
        t_max: args.t_max,
        max_steps_per_segment: args.max_steps,
        convergence_k: args.convergence_k,
        meter_verifier: !args.no_meter_verifier,
    };

    let mut outcomes = Vec::with_capacity(args.trials);
    for _ in 0..args.trials {
        outcomes.push(tts_run(
            solver.as_ref(),
            verifier.as_ref(),
            &tools,
            &args.query,
            &config,
        )?);
    }

    let summary = Summary {
        schema: "tts-summary.v1",
        query: &args.query,
        trials: args.trials,
        base_seed: seed,
        answered: outcomes.iter().filter(|o| o.final_answer.is_some()).count(),
        converged: outcomes.iter().filter(|o| o.converged).count(),
        modal_answer: modal_answer(&outcomes),
    };
    let mut out = open_output(args.report.as_deref())?;
    serde_json::to_writer(&mut out, &summary)?;
    out.write_all(b"\n")?;
    for outcome in &outcomes {
        write_report(&mut out, &config, outcome)?;
    }
    drop(out);
    if args.report.is_some() {
        let answer = outcomes
            .last()
            .and_then(|o| o.final_answer.as_deref())
            .unwrap_or("(no answer)");
        println!(
            "{} trial(s), {} answered, {} converged; last answer: {answer}",
            args.trials, summary.answered, summary.converged
        );
    }
    Ok(())
}
