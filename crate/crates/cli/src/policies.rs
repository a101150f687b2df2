//! Built-in policy wiring: the deterministic solver/verifier pair used by
//! `--policy scripted`, the remote chat-completions backend, and the
//! deterministic planner that drives multi-agent trace generation.

use clap::ValueEnum;
use veriseek_core::multi_agent::{FAILED_RESULT, NO_CHANGE, PLAN_PROMPT, REVISE_PROMPT, SYNTH_PROMPT};
use veriseek_core::runtime::policy::{
    PolicyBackend, PolicyDecision, RemoteConfig, RemotePolicy, ResolvingVerifier, SimSolverPolicy,
};
use veriseek_core::runtime::{Action, VisibleContext};
use veriseek_core::world::generate::render_clause;
use veriseek_core::{Error, Result};

use crate::config::FileConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum PolicyKind {
    /// Deterministic built-in solver (search each clause, visit, intersect).
    #[default]
    Scripted,
    /// Chat-completions endpoint from the config file's [remote] section.
    Remote,
}

/// The built-in solver visits deeper than the library default so that
/// multi-constraint questions over fixture worlds are usually solvable:
/// relation clauses often bury the subject's page behind the related
/// entity's own pages in search ranking.
fn thorough_solver() -> SimSolverPolicy {
    SimSolverPolicy {
        max_clauses: None,
        visits_per_clause: 5,
    }
}

fn remote_policy(config: &FileConfig) -> Result<RemotePolicy> {
    let section = config.remote.as_ref().ok_or_else(|| {
        Error::invalid("--policy remote requires a [remote] section in the config file")
    })?;
    RemotePolicy::new(RemoteConfig {
        endpoint: section.endpoint.clone(),
        model: section.model.clone(),
        api_key: section.api_key.clone(),
        timeout_secs: section.timeout_secs.unwrap_or(60),
    })
}

/// Question-answering policy for rollouts.
pub fn solver(kind: PolicyKind, config: &FileConfig) -> Result<Box<dyn PolicyBackend>> {
    Ok(match kind {
        PolicyKind::Scripted => Box::new(thorough_solver()),
        PolicyKind::Remote => Box::new(remote_policy(config)?),
    })
}

/// Verifier policy for candidate checking: the scripted kind re-solves the
/// question independently and compares answers.
pub fn verifier(kind: PolicyKind, config: &FileConfig) -> Result<Box<dyn PolicyBackend>> {
    Ok(match kind {
        PolicyKind::Scripted => Box::new(ResolvingVerifier::new(thorough_solver())),
        PolicyKind::Remote => Box::new(remote_policy(config)?),
    })
}

/// Deterministic main agent for verified trace generation. Planning emits a
/// constraint-prefix ladder (each sub-question adds one clause, the last one
/// is the full question), revision keeps the plan, and synthesis answers
/// with the deepest verified finding.
pub struct PlannerPolicy;

impl PlannerPolicy {
    fn plan(query: &str) -> String {
        let clauses = SimSolverPolicy::question_clauses(query);
        if clauses.is_empty() {
            return query.to_string();
        }
        let rendered: Vec<String> = clauses
            .iter()
            .map(|(pred, value)| render_clause(pred, value))
            .collect();
        (1..=rendered.len())
            .map(|depth| format!("Which entity {}?", rendered[..depth].join("; ")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn synthesize(prompt_query: &str) -> String {
        let mut last = None;
        let mut in_findings = false;
        for line in prompt_query.lines() {
            if line == "verified findings:" {
                in_findings = true;
                continue;
            }
            if !in_findings {
                continue;
            }
            let Some(rest) = line.strip_prefix('(') else {
                continue;
            };
            let Some((_, result)) = rest.split_once(") ") else {
                continue;
            };
            if !result.is_empty() && result != FAILED_RESULT {
                last = Some(result.to_string());
            }
        }
        last.unwrap_or_else(|| "unknown".to_string())
    }
}

impl PolicyBackend for PlannerPolicy {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        let text = if ctx.system_prompt == PLAN_PROMPT {
            Self::plan(ctx.query)
        } else if ctx.system_prompt == REVISE_PROMPT {
            NO_CHANGE.to_string()
        } else if ctx.system_prompt == SYNTH_PROMPT {
            Self::synthesize(ctx.query)
        } else {
            return Err(Error::invalid(format!(
                "planner received an unexpected role prompt: {:?}",
                ctx.system_prompt
            )));
        };
        Ok(PolicyDecision::new(
            "deterministic planner reply",
            Action::FinalAnswer { text },
        ))
    }
}
