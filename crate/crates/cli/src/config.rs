//! Structured config file: one TOML document supplying defaults that
//! command-line flags override.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use veriseek_core::{Error, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Default base seed when `--seed` is absent.
    pub seed: Option<u64>,
    /// Default log filter when `--log-level` is absent.
    pub log_level: Option<String>,
    /// Chat-completions endpoint for `--policy remote`.
    pub remote: Option<RemoteSection>,
    #[serde(default)]
    pub judge: JudgeSection,
    #[serde(default)]
    pub grpo: GrpoSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSection {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSection {
    /// Escalation threshold for the two-stage judge.
    pub escalate_below: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoSection {
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))
        }
    }
}
