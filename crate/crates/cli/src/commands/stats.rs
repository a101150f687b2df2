//! `stats`: trajectory analytics (token counts and tool-call rounds) or
//! dataset answerable rate, depending on the inputs given.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use veriseek_core::stats::{answerable_rate, compute_stats, read_results, write_csv};
use veriseek_core::synth::read_dataset;
use veriseek_core::{Error, Result};

use super::open_output;

#[derive(Args)]
pub struct StatsArgs {
    /// Trajectory file to analyze (token/tool-round distributions).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["qa", "results"])]
    pub traj: Option<PathBuf>,
    /// Also write the histograms as plot-ready CSV here (requires --traj).
    #[arg(long, value_name = "PATH", requires = "traj")]
    pub csv: Option<PathBuf>,
    /// QA dataset for answerable-rate mode (requires --results).
    #[arg(long, value_name = "PATH", requires = "results")]
    pub qa: Option<PathBuf>,
    /// Judged results for answerable-rate mode (requires --qa).
    #[arg(long, value_name = "PATH", requires = "qa")]
    pub results: Option<PathBuf>,
    /// JSON output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RateReport {
    items: usize,
    answerable_rate: f64,
}

pub fn run(args: StatsArgs) -> Result<()> {
    match (&args.traj, &args.qa, &args.results) {
        (Some(traj), None, None) => {
            let stats = compute_stats(BufReader::new(File::open(traj)?))?;
            if let Some(csv_path) = &args.csv {
                write_csv(BufWriter::new(File::create(csv_path)?), &stats)?;
            }
            let mut out = open_output(args.out.as_deref())?;
            serde_json::to_writer_pretty(&mut out, &stats)?;
            out.write_all(b"\n")?;
            Ok(())
        }
        (None, Some(qa), Some(results)) => {
            let items = read_dataset(BufReader::new(File::open(qa)?))?;
            let records = read_results(BufReader::new(File::open(results)?))?;
            let rate = answerable_rate(&items, &records)?;
            let report = RateReport {
                items: items.len(),
                answerable_rate: rate,
            };
            let mut out = open_output(args.out.as_deref())?;
            serde_json::to_writer_pretty(&mut out, &report)?;
            out.write_all(b"\n")?;
            Ok(())
        }
        _ => Err(Error::invalid(
            "pass either --traj PATH or both --qa PATH and --results PATH",
        )),
    }
}
