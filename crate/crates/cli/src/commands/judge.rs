//! `judge`: batch-judge line-delimited {query, output, reference} records
//! and emit the same records extended with {verdict, stage, confidence}.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use veriseek_core::judge::{rule_verdict, HeuristicJudge, JudgeLabel, JudgeRecord, MatchRule, TwoStageJudge};
use veriseek_core::{Error, Result};

use crate::config::FileConfig;

use super::open_output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeMode {
    /// Deterministic string/numeric matching only.
    Rule,
    /// Heuristic primary with escalation to a decisive secondary.
    TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleKind {
    /// Byte equality.
    Exact,
    /// Case, whitespace, and terminal-punctuation insensitive.
    Normalized,
    /// Number-with-unit comparison under a relative tolerance.
    Numeric,
}

#[derive(Args)]
pub struct JudgeArgs {
    /// Input path: one JSON object {query, output, reference} per line.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Judging pipeline.
    #[arg(long, value_enum)]
    pub mode: JudgeMode,
    /// Match rule for --mode rule.
    #[arg(long, value_enum, default_value_t = RuleKind::Normalized)]
    pub rule: RuleKind,
    /// Relative tolerance for --rule numeric.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Escalation threshold for --mode two-stage (flag beats config; default 0.7).
    #[arg(long)]
    pub escalate_below: Option<f64>,
    /// Output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct InputRecord {
    query: String,
    output: String,
    reference: String,
}

pub fn run(args: JudgeArgs, file: &FileConfig) -> Result<()> {
    let reader = BufReader::new(File::open(&args.input)?);
    let mut inputs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InputRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        inputs.push(record);
    }

    let rule = match args.rule {
        RuleKind::Exact => MatchRule::exact(),
        RuleKind::Normalized => MatchRule::normalized(),
        RuleKind::Numeric => MatchRule::numeric(args.tol),
    };
    let primary = HeuristicJudge::default();
    // The escalation target never defers again: with the uncertainty band
    // disabled, every escalated sample gets a decisive verdict.
    let secondary = HeuristicJudge {
        uncertain_overlap: 1.1,
    };
    let mut two_stage = TwoStageJudge::new(&primary, &secondary);
    if let Some(threshold) = args.escalate_below.or(file.judge.escalate_below) {
        two_stage.escalate_below = threshold;
    }

    let mut out = open_output(args.out.as_deref())?;
    let mut correct = 0usize;
    let mut incorrect = 0usize;
    let mut uncertain = 0usize;
    let total = inputs.len();
    for input in inputs {
        let verdict = match args.mode {
            JudgeMode::Rule => rule_verdict(&input.output, &input.reference, &rule),
            JudgeMode::TwoStage => {
                two_stage.judge(&input.query, &input.output, &input.reference)
            }
        };
        match verdict.label {
            JudgeLabel::Correct => correct += 1,
            JudgeLabel::Incorrect => incorrect += 1,
            JudgeLabel::Uncertain => uncertain += 1,
        }
        let record = JudgeRecord {
            query: input.query,
            output: input.output,
            reference: input.reference,
            verdict: verdict.label,
            stage: verdict.stage,
            confidence: verdict.confidence,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    drop(out);
    if args.out.is_some() {
        println!("judged {total}: {correct} correct, {incorrect} incorrect, {uncertain} uncertain");
    }
    Ok(())
}
