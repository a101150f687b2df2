//! Verifier-guided test-time scaling.
//!
//! One question, many attempts: the solver runs a segment per attempt,
//! discard-all resets separate attempts, and every answer candidate is
//! verified independently — a cheap rule screen first, then an
//! agent-as-judge rollout. Candidates accumulate in a pool; the final
//! answer comes from a deterministic joint-verify selection over that
//! pool, or an explicit no-answer outcome when the pool is empty.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multi_agent::{parse_review, Verdict, VERIFIER_PROMPT};
use crate::runtime::policy::{build_verification_query, PolicyBackend};
use crate::runtime::tools::ToolLayer;
use crate::runtime::{
    detect_degeneration, run_rollout, write_trajectories, DegenerationTrigger, ResetReason,
    RolloutConfig, RolloutSession, StopReason, Trajectory,
};
use crate::text::normalize_answer;

/// System prompt for solver segments.
pub const SOLVER_PROMPT: &str =
    "Answer the question with the search and visit tools; commit to a final answer once confident.";

/// Longest answer the rule screen accepts, in bytes.
pub const ANSWER_LENGTH_CAP: usize = 4096;
/// Refusal phrases rejected by the rule screen (matched case-insensitively
/// as substrings of the candidate).
pub const REFUSAL_PHRASES: [&str; 5] = [
    "i cannot",
    "i can't",
    "i am unable",
    "unable to answer",
    "i don't know",
];
/// Placeholder answers rejected by the rule screen (matched against the
/// whole normalized candidate).
pub const PLACEHOLDER_ANSWERS: [&str; 3] = ["unknown", "n/a", "none"];

/// Limits and knobs for one scaled run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtsConfig {
    /// Cumulative tool-call budget for the whole run; also caps the number
    /// of attempts (segments).
    pub t_max: usize,
    /// Step cap per solver segment and per verifier rollout.
    pub max_steps_per_segment: usize,
    /// Stop sampling once this many identical verified-pass candidates
    /// (compared by normalized answer text) have accumulated.
    pub convergence_k: usize,
    /// Whether verifier rollout tool calls are charged against `t_max`.
    pub meter_verifier: bool,
}

impl Default for TtsConfig {
    fn default() -> Self {
        Self {
            t_max: 600,
            max_steps_per_segment: 20,
            convergence_k: 2,
            meter_verifier: true,
        }
    }
}

impl TtsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max < 1 {
            return Err(Error::invalid("t_max must be >= 1"));
        }
        if self.max_steps_per_segment < 1 {
            return Err(Error::invalid("max_steps_per_segment must be >= 1"));
        }
        if self.convergence_k < 1 {
            return Err(Error::invalid("convergence_k must be >= 1"));
        }
        Ok(())
    }
}

/// Verification state of one pooled candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateVerdict {
    Pass,
    Fail,
    /// The verifier could not reach a verdict (e.g. its rollout ran out of
    /// budget before answering).
    Unverified,
}

impl CandidateVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateVerdict::Pass => "pass",
            CandidateVerdict::Fail => "fail",
            CandidateVerdict::Unverified => "unverified",
        }
    }
}

/// One answer candidate: what was proposed, in which segment, and how
/// verification judged it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub answer: String,
    pub segment_index: usize,
    pub verdict: CandidateVerdict,
    pub rationale: String,
}

/// All candidates produced by one run, in segment order. Each is verified
/// exactly once, when it is produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// How many verified-pass candidates match `answer` after normalization.
    pub fn matching_pass_count(&self, answer: &str) -> usize {
        let key = normalize_answer(answer);
        self.candidates
            .iter()
            .filter(|c| c.verdict == CandidateVerdict::Pass && normalize_answer(&c.answer) == key)
            .count()
    }
}

/// Outcome of [`verify_candidate`]: the verdict, a human-readable
/// rationale, and how many tool calls the judge rollout spent.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCheck {
    pub verdict: CandidateVerdict,
    pub rationale: String,
    pub verifier_tool_calls: usize,
}

/// Rule screen for candidate answers. Returns the failure rationale, or
/// `None` when the candidate clears every rule.
pub fn rule_check(answer: &str) -> Option<String> {
    let trimmed = answer.trim();
    if trimmed.is_empty() {
        return Some("rule: empty answer".to_string());
    }
    if answer.len() > ANSWER_LENGTH_CAP {
        return Some(format!("rule: answer exceeds {ANSWER_LENGTH_CAP} bytes"));
    }
    let lower = trimmed.to_lowercase();
    if let Some(phrase) = REFUSAL_PHRASES.iter().find(|p| lower.contains(**p)) {
        return Some(format!("rule: refusal phrase {phrase:?}"));
    }
    if PLACEHOLDER_ANSWERS.contains(&normalize_answer(answer).as_str()) {
        return Some("rule: placeholder answer".to_string());
    }
    None
}

/// Verify one candidate: the rule screen first (a rule failure settles the
/// verdict without consulting the judge), then an agent-as-judge rollout
/// over the verification query. `verifier_budget` caps the judge rollout's
/// tool calls; a judge that cannot reach a verdict inside it leaves the
/// candidate [`CandidateVerdict::Unverified`].
pub fn verify_candidate(
    verifier: &dyn PolicyBackend,
    tools: &ToolLayer,
    query: &str,
    answer: &str,
    verifier_budget: usize,
    max_steps: usize,
) -> Result<CandidateCheck> {
    if let Some(rationale) = rule_check(answer) {
        return Ok(CandidateCheck {
            verdict: CandidateVerdict::Fail,
            rationale,
            verifier_tool_calls: 0,
        });
    }
    let rollout = RolloutConfig {
        max_steps,
        tool_budget: verifier_budget,
        max_resets: 0,
    };
    let trajectory = run_rollout(
        verifier,
        tools,
        VERIFIER_PROMPT,
        &build_verification_query(query, answer),
        rollout,
    )?;
    let verifier_tool_calls = trajectory.tool_calls_used;
    let (verdict, rationale) = match trajectory.final_answer() {
        None => (
            CandidateVerdict::Unverified,
            "judge: no verdict within budget".to_string(),
        ),
        Some(reply) => match parse_review(reply) {
            (Verdict::Pass, _) => (CandidateVerdict::Pass, format!("judge: {}", reply.trim())),
            (Verdict::Fail, detail) => (
                CandidateVerdict::Fail,
                format!(
                    "judge: {}",
                    detail.unwrap_or_else(|| "unsupported: no detail".to_string())
                ),
            ),
        },
    };
    Ok(CandidateCheck {
        verdict,
        rationale,
        verifier_tool_calls,
    })
}

/// Deterministic final selection over a candidate pool: restrict to
/// verified-pass candidates when any exist (otherwise use all), group by
/// normalized answer text, take the largest group, and break size ties in
/// favor of the group whose earliest candidate has the lowest segment
/// index. Returns that candidate's original text. An empty pool is a
/// precondition violation.
pub fn joint_verify(pool: &CandidatePool) -> Result<String> {
    if pool.candidates.is_empty() {
        return Err(Error::invalid(
            "joint verify requires a non-empty candidate pool",
        ));
    }
    let passing: Vec<&Candidate> = pool
        .candidates
        .iter()
        .filter(|c| c.verdict == CandidateVerdict::Pass)
        .collect();
    let field: Vec<&Candidate> = if passing.is_empty() {
        pool.candidates.iter().collect()
    } else {
        passing
    };
    let mut groups: Vec<(String, Vec<&Candidate>)> = Vec::new();
    for candidate in field {
        let key = normalize_answer(&candidate.answer);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(candidate),
            None => groups.push((key, vec![candidate])),
        }
    }
    let best = groups
        .iter()
        .max_by(|a, b| {
            a.1.len()
                .cmp(&b.1.len())
                .then_with(|| b.1[0].segment_index.cmp(&a.1[0].segment_index))
        })
        .expect("non-empty pool yields at least one group");
    Ok(best.1[0].answer.clone())
}

/// Everything a scaled run produced: the selected answer (or an explicit
/// no-answer outcome), whether sampling stopped on convergence, the full
/// candidate pool, the complete multi-epoch trajectory, and the verifier's
/// share of the metered tool calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsOutcome {
    pub final_answer: Option<String>,
    pub converged: bool,
    pub pool: CandidatePool,
    pub trajectory: Trajectory,
    pub verifier_tool_calls: usize,
}

/// Run one question with verifier-guided scaling: sample solver segments
/// under a shared cumulative budget, verify each candidate as it appears,
/// stop on convergence or exhaustion, then select via [`joint_verify`].
///
/// The budget `t_max` bounds solver tool calls (and, when
/// `meter_verifier` is set, judge tool calls too). The number of segments
/// is additionally capped at `t_max`, and a segment that neither produced
/// a candidate nor consumed budget ends the run — after a discard-all
/// reset its successor would see a byte-identical context, so further
/// epochs cannot make progress.
pub fn tts_run(
    policy: &dyn PolicyBackend,
    verifier: &dyn PolicyBackend,
    tools: &ToolLayer,
    query: &str,
    config: &TtsConfig,
) -> Result<TtsOutcome> {
    config.validate()?;
    let rollout = RolloutConfig {
        max_steps: config.max_steps_per_segment,
        tool_budget: config.t_max,
        max_resets: 0,
    };
    let mut session = RolloutSession::new(policy, tools, SOLVER_PROMPT, query, rollout);
    let mut pool = CandidatePool::default();
    let mut verifier_tool_calls = 0usize;
    let mut converged = false;
    let mut segment_index = 0usize;
    loop {
        let used_before = session.tool_calls_used();
        let outcome = session.run_segment()?;
        let reset_reason = match outcome.stop {
            StopReason::Answered => {
                let answer = outcome.answer.clone().unwrap_or_default();
                let remaining = if config.meter_verifier {
                    config.t_max.saturating_sub(session.tool_calls_used())
                } else {
                    config.t_max
                };
                let check = verify_candidate(
                    verifier,
                    tools,
                    query,
                    &answer,
                    remaining,
                    config.max_steps_per_segment,
                )?;
                verifier_tool_calls += check.verifier_tool_calls;
                if config.meter_verifier {
                    session.charge_external(check.verifier_tool_calls);
                }
                let passed = check.verdict == CandidateVerdict::Pass;
                pool.candidates.push(Candidate {
                    answer: answer.clone(),
                    segment_index,
                    verdict: check.verdict,
                    rationale: check.rationale,
                });
                if passed && pool.matching_pass_count(&answer) >= config.convergence_k {
                    converged = true;
                    break;
                }
                match detect_degeneration(
                    outcome.steps_in_segment,
                    config.max_steps_per_segment,
                    !passed,
                ) {
                    Some(DegenerationTrigger::FailedToSolve) => ResetReason::FailedToSolve,
                    Some(DegenerationTrigger::MaxStepsReached) => ResetReason::MaxStepsReached,
                    None => ResetReason::ContinueSampling,
                }
            }
            StopReason::MaxSteps => ResetReason::MaxStepsReached,
            StopReason::BudgetExhausted => break,
        };
        if session.tool_calls_used() >= config.t_max {
            break;
        }
        if segment_index + 1 >= config.t_max {
            break;
        }
        let progressed =
            outcome.stop == StopReason::Answered || session.tool_calls_used() > used_before;
        if !progressed {
            break;
        }
        session.discard_all_reset(reset_reason);
        segment_index += 1;
    }
    let final_answer = if pool.is_empty() {
        None
    } else {
        Some(joint_verify(&pool)?)
    };
    Ok(TtsOutcome {
        final_answer,
        converged,
        pool,
        trajectory: session.into_trajectory(),
        verifier_tool_calls,
    })
}

/// Schema tags for report lines.
pub const REPORT_SCHEMA: &str = "tts-report.v1";
pub const CANDIDATE_SCHEMA: &str = "tts-candidate.v1";

#[derive(Debug, Serialize, Deserialize)]
struct ReportHeader {
    schema: String,
    query: String,
    t_max: usize,
    max_steps_per_segment: usize,
    convergence_k: usize,
    meter_verifier: bool,
    interpretations: Vec<String>,
    converged: bool,
    final_answer: Option<String>,
    candidates: usize,
    solver_tool_calls: usize,
    verifier_tool_calls: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateLine {
    schema: String,
    #[serde(flatten)]
    candidate: Candidate,
}

/// The engine-chosen rules a report's numbers depend on, spelled out so a
/// reader can interpret them without consulting the source.
pub fn interpretation_notes(config: &TtsConfig) -> Vec<String> {
    vec![
        format!(
            "convergence rule: sampling stops after {} identical verified-pass candidates \
             (configurable engine default)",
            config.convergence_k
        ),
        "final selection: verified-majority grouping with earliest-segment tie-break \
         (engine-chosen joint-verify algorithm)"
            .to_string(),
        if config.meter_verifier {
            "verifier rollout tool calls are metered against t_max".to_string()
        } else {
            "verifier rollout tool calls are excluded from t_max".to_string()
        },
        "attempts are additionally capped at t_max segments (livelock guard)".to_string(),
    ]
}

/// Serialize one scaled run as JSONL: a header line carrying the config
/// and interpretation notes, one line per candidate, then the full
/// trajectory in the trajectory serialization format.
pub fn write_report<W: Write>(mut out: W, config: &TtsConfig, outcome: &TtsOutcome) -> Result<()> {
    let metered_verifier_share = if config.meter_verifier {
        outcome.verifier_tool_calls
    } else {
        0
    };
    let header = ReportHeader {
        schema: REPORT_SCHEMA.to_string(),
        query: outcome.trajectory.query.clone(),
        t_max: config.t_max,
        max_steps_per_segment: config.max_steps_per_segment,
        convergence_k: config.convergence_k,
        meter_verifier: config.meter_verifier,
        interpretations: interpretation_notes(config),
        converged: outcome.converged,
        final_answer: outcome.final_answer.clone(),
        candidates: outcome.pool.len(),
        solver_tool_calls: outcome
            .trajectory
            .tool_calls_used
            .saturating_sub(metered_verifier_share),
        verifier_tool_calls: outcome.verifier_tool_calls,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for candidate in &outcome.pool.candidates {
        let line = CandidateLine {
            schema: CANDIDATE_SCHEMA.to_string(),
            candidate: candidate.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    write_trajectories(out, std::slice::from_ref(&outcome.trajectory))
}
