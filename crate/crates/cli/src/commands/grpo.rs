//! `grpo check`: read a line-delimited batch of rollout records, group them
//! by `group_id`, and print per-group objective components.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use veriseek_core::training::{
    grpo_components, GrpoComponents, GrpoConfig, RolloutGroup, RolloutLogprobs, TokenRole,
};
use veriseek_core::{Error, Result};

use crate::config::FileConfig;

use super::open_output;

#[derive(Args)]
pub struct CheckArgs {
    /// Batch input path: one JSON object per rollout with fields
    /// {roles, logp_new, logp_old, logp_ref, reward, group_id}.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Clip range (flag beats config; default 0.2).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// KL penalty coefficient (flag beats config; default 0).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct BatchRecord {
    roles: Vec<TokenRole>,
    logp_new: Vec<f64>,
    logp_old: Vec<f64>,
    logp_ref: Vec<f64>,
    reward: f64,
    group_id: String,
}

#[derive(Serialize)]
struct GroupLine<'a> {
    group_id: &'a str,
    #[serde(flatten)]
    components: GrpoComponents,
}

pub fn check(args: CheckArgs, file: &FileConfig) -> Result<()> {
    let defaults = GrpoConfig::default();
    let config = GrpoConfig::new(
        args.epsilon
            .or(file.grpo.epsilon)
            .unwrap_or(defaults.epsilon),
        args.beta.or(file.grpo.beta).unwrap_or(defaults.beta),
    )?;

    let reader = BufReader::new(File::open(&args.input)?);
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<RolloutLogprobs>)> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BatchRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let entry = groups.entry(record.group_id).or_default();
        entry.0.push(record.reward);
        entry.1.push(RolloutLogprobs {
            roles: record.roles,
            logp_new: record.logp_new,
            logp_old: record.logp_old,
            logp_ref: record.logp_ref,
        });
    }
    if groups.is_empty() {
        return Err(Error::invalid("batch file contains no rollout records"));
    }

    let mut out = open_output(args.out.as_deref())?;
    for (group_id, (rewards, rollouts)) in &groups {
        let group = RolloutGroup::new(rewards.clone(), rollouts.clone())?;
        let components = grpo_components(&group, &config)?;
        let line = GroupLine {
            group_id,
            components,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
