//! Three-role verified trace generation.
//!
//! A main agent decomposes the query into sub-tasks and synthesizes the
//! final answer; a search agent executes each sub-task as a bounded tool
//! rollout; a verifier agent independently checks every result. The full
//! record — plans, per-attempt results, verdicts, feedback — is the trace.
//! Traces flatten deterministically into single-agent form for training,
//! and rejected trajectories can be retried once behind a structured
//! reflection note.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::policy::{build_verification_query, PolicyBackend};
use crate::runtime::tools::ToolLayer;
use crate::runtime::{
    run_rollout, Action, ResetEvent, ResetReason, RolloutConfig, RolloutSession, Step, StopReason,
    Trajectory, VisibleContext,
};

/// System prompt for the planning call.
pub const PLAN_PROMPT: &str =
    "Decompose the question into focused sub-questions, one per line.";
/// System prompt for the optional plan-revision call after each sub-task.
pub const REVISE_PROMPT: &str = "Review the findings and the remaining sub-questions. \
     Reply 'no change' to keep them, or a revised list, one per line.";
/// System prompt for the answer-synthesis call.
pub const SYNTH_PROMPT: &str =
    "Combine the verified findings into a direct final answer. Reply with the answer only.";
/// System prompt for search sub-agent rollouts.
pub const SEARCH_PROMPT: &str =
    "Answer the focused sub-question using the search and visit tools.";
/// System prompt for verifier rollouts.
pub const VERIFIER_PROMPT: &str = "Check the candidate against the evidence. Reply 'pass ...' \
     or 'fail <category>: <detail>' with category one of factual_error, incomplete, unsupported.";
/// System prompt stamped on flattened trajectories.
pub const FLAT_PROMPT: &str =
    "Answer the question with the search and visit tools, verifying findings as you go.";

/// Result string recorded when a sub-task rollout ends without an answer.
pub const FAILED_RESULT: &str = "[failed: no answer within budget]";
/// Reply that keeps the current plan during a revision call.
pub const NO_CHANGE: &str = "no change";
/// Closed set of verifier feedback categories.
pub const FEEDBACK_CATEGORIES: [&str; 3] = ["factual_error", "incomplete", "unsupported"];

/// Thought markers used by [`flatten_to_react`] and [`reflect_rerollout`].
pub const PLAN_MARKER: &str = "[plan]";
pub const SUBTASK_MARKER_PREFIX: &str = "[sub-task ";
pub const VERIFICATION_MARKER: &str = "[verification]";
pub const FINAL_VERIFICATION_MARKER: &str = "[final-verification]";
pub const REFLECTION_MARKER: &str = "[reflection]";

/// Binary verifier verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

/// Sub-task lifecycle. Transitions run pending → done or pending → failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTaskStatus {
    Pending,
    Done,
    Failed,
}

/// One focused sub-question delegated to the search agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub id: String,
    pub query: String,
    pub status: SubTaskStatus,
}

impl SubTask {
    fn finish(&mut self, passed: bool) {
        assert_eq!(
            self.status,
            SubTaskStatus::Pending,
            "sub-task {} finished twice",
            self.id
        );
        self.status = if passed {
            SubTaskStatus::Done
        } else {
            SubTaskStatus::Failed
        };
    }
}

/// The main agent's decomposition. `revision_index` counts plan revisions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub subtasks: Vec<SubTask>,
    pub revision_index: usize,
}

/// One execution attempt of a sub-task: the (possibly revised) query, the
/// full rollout steps, and the verifier's judgment of the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub query: String,
    pub steps: Vec<Step>,
    /// Charged tool calls in this attempt's rollout.
    pub tool_calls: usize,
    pub result: String,
    pub verdict: Verdict,
    pub feedback: Option<String>,
}

/// Final record of one sub-task: the last attempt's outcome plus the full
/// attempt log (needed for flattening and feedback-causality checks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTaskRecord {
    pub subtask: SubTask,
    pub result: String,
    pub verdict: Verdict,
    pub feedback: Option<String>,
    pub attempts: usize,
    pub attempt_log: Vec<AttemptRecord>,
}

/// Everything one verified run produced. Only traces with
/// `final_verdict = pass` may be exported for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAgentTrace {
    pub query: String,
    pub plans: Vec<Plan>,
    pub records: Vec<SubTaskRecord>,
    pub final_answer: String,
    pub final_verdict: Verdict,
}

impl MultiAgentTrace {
    /// The training-set acceptance gate.
    pub fn accepted_for_training(&self) -> bool {
        self.final_verdict.is_pass()
    }
}

/// The three policies of a verified run.
pub struct RolePolicies<'a> {
    pub main: &'a dyn PolicyBackend,
    pub search: &'a dyn PolicyBackend,
    pub verifier: &'a dyn PolicyBackend,
}

/// Limits for one verified run. Search and verifier rollouts share the same
/// per-rollout budget class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Re-attempts allowed per sub-task after the first failure.
    pub max_revisions: usize,
    /// Tool budget per rollout (search and verifier alike).
    pub rollout_budget: usize,
    /// Step cap per rollout.
    pub max_steps: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            max_revisions: 2,
            rollout_budget: 60,
            max_steps: 20,
        }
    }
}

/// Ask the main policy for a direct textual reply (no tools).
fn main_reply(policy: &dyn PolicyBackend, system: &str, query: &str) -> Result<Option<String>> {
    let ctx = VisibleContext {
        system_prompt: system,
        query,
        preamble: None,
        steps: &[],
    };
    match policy.next(&ctx)?.action {
        Action::FinalAnswer { text } => Ok(Some(text)),
        Action::ToolCall { .. } => Ok(None),
    }
}

/// Parse a planner reply into sub-task queries: one per non-empty line,
/// tolerant of `1.`, `2)`, `-`, `*` list markers.
fn parse_plan_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let t = line.trim();
            let t = t
                .strip_prefix(['-', '*'])
                .map(str::trim_start)
                .unwrap_or(t);
            let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits > 0 {
                match t[digits..].strip_prefix(['.', ')']) {
                    Some(rest) => rest.trim_start(),
                    None => t,
                }
            } else {
                t
            }
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Step 1 of a verified run: the main agent decomposes the query.
pub fn plan_decompose(main: &dyn PolicyBackend, query: &str) -> Result<Plan> {
    match main_reply(main, PLAN_PROMPT, query)? {
        Some(text) => {
            let queries = parse_plan_lines(&text);
            if queries.is_empty() {
                return Err(Error::DegeneratePlan(format!(
                    "planner produced no sub-tasks for {query:?}"
                )));
            }
            let subtasks = queries
                .into_iter()
                .enumerate()
                .map(|(i, q)| SubTask {
                    id: format!("s{}", i + 1),
                    query: q,
                    status: SubTaskStatus::Pending,
                })
                .collect();
            Ok(Plan {
                subtasks,
                revision_index: 0,
            })
        }
        None => Err(Error::DegeneratePlan(
            "planner replied with a tool call instead of a plan".to_string(),
        )),
    }
}

/// One sub-task execution: a bounded rollout of the search agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTaskExecution {
    pub result: String,
    pub answered: bool,
    pub steps: Vec<Step>,
    /// Charged tool calls.
    pub tool_calls: usize,
}

/// Run the search agent on one sub-task query. A rollout that ends without
/// an answer (budget or step cap) yields the [`FAILED_RESULT`] marker.
pub fn execute_subtask(
    search: &dyn PolicyBackend,
    tools: &ToolLayer,
    query: &str,
    config: &TraceConfig,
) -> Result<SubTaskExecution> {
    if config.rollout_budget == 0 {
        return Err(Error::invalid("sub-task budget must be >= 1"));
    }
    let rollout_config = RolloutConfig {
        max_steps: config.max_steps,
        tool_budget: config.rollout_budget,
        max_resets: 0,
    };
    let trajectory = run_rollout(search, tools, SEARCH_PROMPT, query, rollout_config)?;
    let answered = trajectory.stop_reason == StopReason::Answered;
    let result = trajectory
        .final_answer()
        .map(str::to_string)
        .unwrap_or_else(|| FAILED_RESULT.to_string());
    let tool_calls = trajectory.tool_calls_used;
    let steps = trajectory.segments.into_iter().flatten().collect();
    Ok(SubTaskExecution {
        result,
        answered,
        steps,
        tool_calls,
    })
}

/// Parse a verifier reply. Replies open with `pass` or `fail`; fail feedback
/// follows the `<category>: <detail>` convention and anything outside the
/// closed category set is wrapped as `unsupported`.
pub fn parse_review(text: &str) -> (Verdict, Option<String>) {
    let t = text.trim();
    let lower = t.to_ascii_lowercase();
    if lower.starts_with("pass") {
        return (Verdict::Pass, None);
    }
    if lower.starts_with("fail") {
        let rest = t[4..]
            .trim_start_matches(|c: char| c == ':' || c == '-' || c == '—' || c.is_whitespace());
        let feedback = if rest.is_empty() {
            "unsupported: verifier gave no detail".to_string()
        } else if FEEDBACK_CATEGORIES.iter().any(|c| rest.starts_with(c)) {
            rest.to_string()
        } else {
            format!("unsupported: {rest}")
        };
        return (Verdict::Fail, Some(feedback));
    }
    (
        Verdict::Fail,
        Some(format!("unsupported: unrecognized verifier verdict {t:?}")),
    )
}

/// Verify a result against its question via an independent verifier rollout.
/// Empty results (and the failed-rollout marker) fail as `incomplete`
/// without consulting the verifier.
pub fn verify_subtask(
    verifier: &dyn PolicyBackend,
    tools: &ToolLayer,
    question: &str,
    result: &str,
    config: &TraceConfig,
) -> Result<(Verdict, Option<String>)> {
    if result.trim().is_empty() || result == FAILED_RESULT {
        return Ok((
            Verdict::Fail,
            Some("incomplete: sub-task produced no result".to_string()),
        ));
    }
    let query = build_verification_query(question, result);
    let rollout_config = RolloutConfig {
        max_steps: config.max_steps,
        tool_budget: config.rollout_budget,
        max_resets: 0,
    };
    let trajectory = run_rollout(verifier, tools, VERIFIER_PROMPT, &query, rollout_config)?;
    match trajectory.final_answer() {
        Some(text) => Ok(parse_review(text)),
        None => Ok((
            Verdict::Fail,
            Some("unsupported: verifier returned no verdict".to_string()),
        )),
    }
}

/// Rewrite a failed sub-task query with the verifier's feedback appended, so
/// the retry is a different query (feedback causality).
fn revise_query(query: &str, feedback: &str) -> String {
    format!("{query} (feedback: {feedback})")
}

/// Ask the main agent whether the remaining plan should change; `None` means
/// keep it. Replies other than [`NO_CHANGE`] are parsed as a replacement
/// list for the not-yet-executed sub-tasks.
fn maybe_revise_plan(
    main: &dyn PolicyBackend,
    original_query: &str,
    plan: &Plan,
    records: &[SubTaskRecord],
    cursor: usize,
) -> Result<Option<Vec<String>>> {
    let mut prompt = String::from(original_query);
    prompt.push_str("\n\nfindings so far:\n");
    for record in records {
        prompt.push_str(&format!("({}) {}\n", record.subtask.id, record.result));
    }
    prompt.push_str("remaining sub-questions:\n");
    for subtask in &plan.subtasks[cursor..] {
        prompt.push_str(&format!("({}) {}\n", subtask.id, subtask.query));
    }
    match main_reply(main, REVISE_PROMPT, &prompt)? {
        Some(text) => {
            if text.trim().eq_ignore_ascii_case(NO_CHANGE) {
                return Ok(None);
            }
            let queries = parse_plan_lines(&text);
            if queries.is_empty() {
                return Err(Error::DegeneratePlan(
                    "plan revision produced no sub-tasks".to_string(),
                ));
            }
            Ok(Some(queries))
        }
        None => Err(Error::DegeneratePlan(
            "plan revision replied with a tool call".to_string(),
        )),
    }
}

/// Ask the main agent for the final answer over the verified findings.
fn synthesize_answer(
    main: &dyn PolicyBackend,
    original_query: &str,
    records: &[SubTaskRecord],
) -> Result<String> {
    let mut prompt = String::from(original_query);
    prompt.push_str("\n\nverified findings:\n");
    let mut any = false;
    for record in records {
        if record.verdict.is_pass() {
            prompt.push_str(&format!("({}) {}\n", record.subtask.id, record.result));
            any = true;
        }
    }
    if !any {
        prompt.push_str("none\n");
    }
    match main_reply(main, SYNTH_PROMPT, &prompt)? {
        Some(text) => Ok(text),
        None => Err(Error::Backend(
            "synthesis step replied with a tool call instead of an answer".to_string(),
        )),
    }
}

/// The six-step verified run: plan, then per sub-task execute → verify with
/// feedback-driven retries (≤ `max_revisions` re-attempts), an optional plan
/// revision after each sub-task, answer synthesis, and final verification.
/// Sub-tasks that exhaust their revisions are marked failed and the run
/// continues; the final verdict may be fail.
pub fn run_verified_trace(
    policies: &RolePolicies<'_>,
    tools: &ToolLayer,
    query: &str,
    config: &TraceConfig,
) -> Result<MultiAgentTrace> {
    let mut plan = plan_decompose(policies.main, query)?;
    let mut next_id = plan.subtasks.len() + 1;
    let mut plans = vec![plan.clone()];
    let mut records: Vec<SubTaskRecord> = Vec::new();
    let mut cursor = 0usize;

    while cursor < plan.subtasks.len() {
        let mut attempt_query = plan.subtasks[cursor].query.clone();
        let mut attempt_log: Vec<AttemptRecord> = Vec::new();
        loop {
            let exec = execute_subtask(policies.search, tools, &attempt_query, config)?;
            let (verdict, feedback) =
                verify_subtask(policies.verifier, tools, &attempt_query, &exec.result, config)?;
            attempt_log.push(AttemptRecord {
                query: attempt_query.clone(),
                steps: exec.steps,
                tool_calls: exec.tool_calls,
                result: exec.result,
                verdict,
                feedback: feedback.clone(),
            });
            if verdict.is_pass() || attempt_log.len() > config.max_revisions {
                break;
            }
            attempt_query = revise_query(
                &attempt_query,
                feedback.as_deref().expect("fail verdicts carry feedback"),
            );
        }
        let last = attempt_log.last().expect("at least one attempt");
        let (last_query, last_result, last_verdict, last_feedback) = (
            last.query.clone(),
            last.result.clone(),
            last.verdict,
            last.feedback.clone(),
        );
        plan.subtasks[cursor].finish(last_verdict.is_pass());
        let mut recorded = plan.subtasks[cursor].clone();
        recorded.query = last_query;
        records.push(SubTaskRecord {
            subtask: recorded,
            result: last_result,
            verdict: last_verdict,
            feedback: last_feedback,
            attempts: attempt_log.len(),
            attempt_log,
        });
        cursor += 1;

        if cursor < plan.subtasks.len() {
            if let Some(queries) =
                maybe_revise_plan(policies.main, query, &plan, &records, cursor)?
            {
                plan.subtasks.truncate(cursor);
                for q in queries {
                    plan.subtasks.push(SubTask {
                        id: format!("s{next_id}"),
                        query: q,
                        status: SubTaskStatus::Pending,
                    });
                    next_id += 1;
                }
                plan.revision_index += 1;
                plans.push(plan.clone());
            }
        }
    }

    let final_answer = synthesize_answer(policies.main, query, &records)?;
    let (final_verdict, _) =
        verify_subtask(policies.verifier, tools, query, &final_answer, config)?;
    Ok(MultiAgentTrace {
        query: query.to_string(),
        plans,
        records,
        final_answer,
        final_verdict,
    })
}

/// Push a marker line onto the pending-thought buffer… flushed into the next
/// emitted step, so markers always precede the work they announce.
fn emit_step(
    steps: &mut Vec<Step>,
    pending: &mut Vec<String>,
    thought: &str,
    action: Action,
    observation: String,
) {
    let merged = if pending.is_empty() {
        thought.to_string()
    } else {
        let mut t = pending.join("\n");
        pending.clear();
        if !thought.is_empty() {
            t.push('\n');
            t.push_str(thought);
        }
        t
    };
    steps.push(Step {
        index: steps.len(),
        thought: merged,
        action,
        observation,
    });
}

/// Deterministically linearize a trace into single-agent form: plan marker,
/// then per attempt its sub-task marker, tool steps, result marker, and
/// verification marker; the final answer closes the trajectory. Tool steps
/// are re-emitted verbatim, so tool-call counts are conserved. Verifier
/// rollout steps are the verifier's own work and stay out; their verdicts
/// appear as the markers.
pub fn flatten_to_react(trace: &MultiAgentTrace) -> Trajectory {
    let mut pending: Vec<String> = Vec::new();
    if let Some(plan) = trace.plans.first() {
        let rendered: Vec<String> = plan
            .subtasks
            .iter()
            .map(|s| format!("({}) {}", s.id, s.query))
            .collect();
        pending.push(format!("{PLAN_MARKER} {}", rendered.join("; ")));
    }

    let mut steps: Vec<Step> = Vec::new();
    let mut tool_calls_used = 0usize;
    for record in &trace.records {
        for attempt in &record.attempt_log {
            pending.push(format!(
                "{SUBTASK_MARKER_PREFIX}{}] {}",
                record.subtask.id, attempt.query
            ));
            for step in &attempt.steps {
                if step.action.is_tool_call() {
                    emit_step(
                        &mut steps,
                        &mut pending,
                        &step.thought,
                        step.action.clone(),
                        step.observation.clone(),
                    );
                }
            }
            tool_calls_used += attempt.tool_calls;
            pending.push(format!(
                "{SUBTASK_MARKER_PREFIX}{} result] {}",
                record.subtask.id, attempt.result
            ));
            pending.push(match attempt.verdict {
                Verdict::Pass => format!("{VERIFICATION_MARKER} pass"),
                Verdict::Fail => format!(
                    "{VERIFICATION_MARKER} fail {}",
                    attempt.feedback.as_deref().unwrap_or("unsupported: no detail")
                ),
            });
        }
    }
    pending.push(format!(
        "{FINAL_VERIFICATION_MARKER} {}",
        trace.final_verdict.as_str()
    ));
    emit_step(
        &mut steps,
        &mut pending,
        "",
        Action::FinalAnswer {
            text: trace.final_answer.clone(),
        },
        String::new(),
    );

    Trajectory {
        query: trace.query.clone(),
        system_prompt: FLAT_PROMPT.to_string(),
        segments: vec![steps],
        reset_events: Vec::new(),
        tool_calls_used,
        stop_reason: StopReason::Answered,
    }
}

/// Where a failed trajectory went wrong, distilled from verifier feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    /// Index of the step that committed the rejected answer (the last
    /// non-tool step), or the last step when none answered.
    pub failing_step: usize,
    pub category: String,
    pub detail: String,
}

/// Locate the failing step and split the verifier feedback into its
/// category and detail parts.
pub fn identify_error(failed: &Trajectory, feedback: &str) -> ErrorAnalysis {
    let (category, detail) = match feedback.split_once(':') {
        Some((c, d)) if FEEDBACK_CATEGORIES.contains(&c.trim()) => {
            (c.trim().to_string(), d.trim().to_string())
        }
        _ => ("unsupported".to_string(), feedback.trim().to_string()),
    };
    let failing_step = failed
        .all_steps()
        .filter(|s| !s.action.is_tool_call())
        .last()
        .or_else(|| failed.all_steps().last())
        .map(|s| s.index)
        .unwrap_or(0);
    ErrorAnalysis {
        failing_step,
        category,
        detail,
    }
}

/// Render the three-part reflection note prepended to the re-rollout.
pub fn build_reflection(analysis: &ErrorAnalysis) -> String {
    let why = match analysis.category.as_str() {
        "factual_error" => "the answer contradicted the gathered evidence",
        "incomplete" => "the attempt stopped before gathering enough evidence",
        _ => "the answer was asserted without corroborating evidence",
    };
    format!(
        "{REFLECTION_MARKER}\nwhat: step {} committed a rejected answer ({})\nwhy: {}\n\
         alternative: re-search each constraint separately and corroborate the candidate \
         in the documents before answering",
        analysis.failing_step, analysis.detail, why
    )
}

/// Retry a rejected trajectory behind a reflection note: verify the old
/// answer really fails, build the what/why/alternative note, re-roll in a
/// fresh context carrying the note as a preamble, and keep the composite
/// (original attempt + reflection + revision) only when the new answer
/// passes verification. `None` means unrecoverable.
pub fn reflect_rerollout(
    solver: &dyn PolicyBackend,
    verifier: &dyn PolicyBackend,
    tools: &ToolLayer,
    failed: &Trajectory,
    config: &TraceConfig,
) -> Result<Option<Trajectory>> {
    if failed
        .all_steps()
        .any(|s| s.thought.contains(REFLECTION_MARKER))
    {
        return Err(Error::invalid(
            "trajectory already carries a reflection block",
        ));
    }
    let old_answer = failed.final_answer().unwrap_or("");
    let (verdict, feedback) =
        verify_subtask(verifier, tools, &failed.query, old_answer, config)?;
    if verdict.is_pass() {
        return Err(Error::invalid(
            "refusing to reflect: the answer is already judged correct",
        ));
    }
    let analysis = identify_error(
        failed,
        feedback.as_deref().unwrap_or("unsupported: no detail"),
    );
    let reflection = build_reflection(&analysis);

    let rollout_config = RolloutConfig {
        max_steps: config.max_steps,
        tool_budget: config.rollout_budget,
        max_resets: 0,
    };
    let mut session = RolloutSession::new(
        solver,
        tools,
        &failed.system_prompt,
        &failed.query,
        rollout_config,
    )
    .with_preamble(reflection.clone());
    let outcome = session.run_segment()?;
    let new_answer = match (outcome.stop, outcome.answer) {
        (StopReason::Answered, Some(answer)) => answer,
        _ => return Ok(None),
    };
    let (verdict, _) = verify_subtask(verifier, tools, &failed.query, &new_answer, config)?;
    if !verdict.is_pass() {
        return Ok(None);
    }

    let rerolled = session.into_trajectory();
    let mut composite = failed.clone();
    let base_index = composite.total_steps();
    let mut segment: Vec<Step> = rerolled.segments.into_iter().flatten().collect();
    for (offset, step) in segment.iter_mut().enumerate() {
        step.index = base_index + offset;
    }
    let first = segment.first_mut().expect("answered segments have steps");
    first.thought = if first.thought.is_empty() {
        reflection
    } else {
        format!("{reflection}\n{}", first.thought)
    };
    composite.reset_events.push(ResetEvent {
        epoch: composite.segments.len(),
        reason: ResetReason::Reflection,
    });
    composite.segments.push(segment);
    composite.tool_calls_used += rerolled.tool_calls_used;
    composite.stop_reason = StopReason::Answered;
    Ok(Some(composite))
}

const TRACE_SCHEMA: &str = "trace.v1";

#[derive(Serialize, Deserialize)]
struct TraceLine {
    schema: String,
    #[serde(flatten)]
    trace: MultiAgentTrace,
}

/// Serialize traces one JSON record per line, schema-tagged.
pub fn write_traces<W: Write>(mut out: W, traces: &[MultiAgentTrace]) -> Result<()> {
    for trace in traces {
        let line = TraceLine {
            schema: TRACE_SCHEMA.to_string(),
            trace: trace.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// Read traces written by [`write_traces`].
pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<MultiAgentTrace>> {
    let mut traces = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if parsed.schema != TRACE_SCHEMA {
            return Err(Error::Schema {
                line: idx + 1,
                msg: format!("unsupported schema {:?}", parsed.schema),
            });
        }
        traces.push(parsed.trace);
    }
    Ok(traces)
}
