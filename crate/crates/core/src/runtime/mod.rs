//! Single-agent rollout loop: thought/action/observation steps, budget
//! accounting, degeneration detection, and discard-all context resets.
//!
//! A [`RolloutSession`] owns one trajectory and advances it one segment at a
//! time; [`run_rollout`] wraps the common run-until-answer case. The policy
//! only ever sees a [`VisibleContext`], so a reset genuinely erases history
//! from its point of view while the full record stays in the trajectory.

pub mod policy;
pub mod tools;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use policy::PolicyBackend;
use tools::ToolLayer;

/// What the agent did at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall {
        tool: String,
        args: BTreeMap<String, String>,
    },
    FinalAnswer {
        text: String,
    },
}

impl Action {
    pub fn is_tool_call(&self) -> bool {
        matches!(self, Action::ToolCall { .. })
    }

    /// Deterministic single-line rendering, used in context displays and
    /// token counting.
    pub fn render(&self) -> String {
        match self {
            Action::ToolCall { tool, args } => {
                let rendered: Vec<String> =
                    args.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!("{tool}({})", rendered.join(", "))
            }
            Action::FinalAnswer { text } => format!("final_answer({text})"),
        }
    }
}

/// One (thought, action, observation) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: Action,
    pub observation: String,
}

/// Why a reset was triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetReason {
    MaxStepsReached,
    FailedToSolve,
    ContinueSampling,
    Reflection,
}

/// A reset on record: which epoch (segment index) it opened and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub epoch: usize,
    pub reason: ResetReason,
}

/// Why a segment stopped advancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Answered,
    MaxSteps,
    BudgetExhausted,
}

/// Degeneration triggers recognized by [`detect_degeneration`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerationTrigger {
    MaxStepsReached,
    FailedToSolve,
}

/// Full record of one agent run: every segment, every reset, and the tool
/// budget consumed. Segments before the last are invisible to the policy —
/// they exist for analysis and training only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub system_prompt: String,
    pub segments: Vec<Vec<Step>>,
    pub reset_events: Vec<ResetEvent>,
    pub tool_calls_used: usize,
    pub stop_reason: StopReason,
}

impl Trajectory {
    pub fn new(system_prompt: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            system_prompt: system_prompt.into(),
            segments: vec![Vec::new()],
            reset_events: Vec::new(),
            tool_calls_used: 0,
            stop_reason: StopReason::Answered,
        }
    }

    pub fn all_steps(&self) -> impl Iterator<Item = &Step> {
        self.segments.iter().flatten()
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// The final answer of the last segment, if its last step answered.
    pub fn final_answer(&self) -> Option<&str> {
        match self.segments.last()?.last()?.action {
            Action::FinalAnswer { ref text } => Some(text),
            _ => None,
        }
    }

    /// Count of ToolCall steps across all segments (charged or not).
    pub fn tool_call_steps(&self) -> usize {
        self.all_steps().filter(|s| s.action.is_tool_call()).count()
    }
}

/// What the policy is allowed to see: system prompt, query, an optional
/// preamble (e.g. a reflection note), and the current segment's steps.
/// Nothing from earlier segments leaks in.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleContext<'a> {
    pub system_prompt: &'a str,
    pub query: &'a str,
    pub preamble: Option<&'a str>,
    pub steps: &'a [Step],
}

impl VisibleContext<'_> {
    /// Deterministic textual rendering; reset-purity checks compare these
    /// byte-for-byte.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[system]\n");
        out.push_str(self.system_prompt);
        out.push('\n');
        if let Some(pre) = self.preamble {
            out.push_str("[preamble]\n");
            out.push_str(pre);
            out.push('\n');
        }
        out.push_str("[query]\n");
        out.push_str(self.query);
        out.push('\n');
        for step in self.steps {
            out.push_str(&format!(
                "[step {}]\nthought: {}\naction: {}\nobservation: {}\n",
                step.index,
                step.thought,
                step.action.render(),
                step.observation
            ));
        }
        out
    }
}

/// Per-rollout limits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub tool_budget: usize,
    /// Automatic discard-all resets `run_rollout` may take on max-steps
    /// degeneration before giving up.
    pub max_resets: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_steps: 20,
            tool_budget: 600,
            max_resets: 0,
        }
    }
}

/// Outcome of advancing one segment to its stopping point.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub stop: StopReason,
    pub answer: Option<String>,
    pub steps_in_segment: usize,
    pub tool_calls_in_segment: usize,
}

/// Decide whether a finished segment degenerated. `verifier_rejected` is the
/// caller-supplied signal that the segment's answer failed verification.
pub fn detect_degeneration(
    segment_len: usize,
    max_steps: usize,
    verifier_rejected: bool,
) -> Option<DegenerationTrigger> {
    if verifier_rejected {
        Some(DegenerationTrigger::FailedToSolve)
    } else if segment_len >= max_steps {
        Some(DegenerationTrigger::MaxStepsReached)
    } else {
        None
    }
}

/// Drives one trajectory: segments advance via [`RolloutSession::run_segment`],
/// and [`RolloutSession::discard_all_reset`] opens a fresh epoch whose
/// visible context carries only the system prompt and query (plus any fixed
/// preamble).
pub struct RolloutSession<'a> {
    policy: &'a dyn PolicyBackend,
    tools: &'a ToolLayer,
    config: RolloutConfig,
    trajectory: Trajectory,
    preamble: Option<String>,
    next_index: usize,
}

impl<'a> RolloutSession<'a> {
    pub fn new(
        policy: &'a dyn PolicyBackend,
        tools: &'a ToolLayer,
        system_prompt: &str,
        query: &str,
        config: RolloutConfig,
    ) -> Self {
        Self {
            policy,
            tools,
            config,
            trajectory: Trajectory::new(system_prompt, query),
            preamble: None,
            next_index: 0,
        }
    }

    /// Attach a fixed preamble (e.g. a reflection note) that stays visible
    /// in every epoch of this session.
    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.preamble = Some(preamble.into());
        self
    }

    pub fn tool_calls_used(&self) -> usize {
        self.trajectory.tool_calls_used
    }

    pub fn config(&self) -> &RolloutConfig {
        &self.config
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    /// The context the policy would see right now.
    pub fn visible_context(&self) -> VisibleContext<'_> {
        VisibleContext {
            system_prompt: &self.trajectory.system_prompt,
            query: &self.trajectory.query,
            preamble: self.preamble.as_deref(),
            steps: self.trajectory.segments.last().expect("segment exists"),
        }
    }

    /// Advance the current segment until it answers, hits the step cap, or
    /// the cumulative tool budget refuses the next call.
    pub fn run_segment(&mut self) -> Result<SegmentOutcome> {
        let mut tool_calls_in_segment = 0usize;
        loop {
            let seg_len = self.trajectory.segments.last().expect("segment").len();
            if seg_len >= self.config.max_steps {
                self.trajectory.stop_reason = StopReason::MaxSteps;
                return Ok(SegmentOutcome {
                    stop: StopReason::MaxSteps,
                    answer: None,
                    steps_in_segment: seg_len,
                    tool_calls_in_segment,
                });
            }
            let decision = match self.policy.next(&self.visible_context()) {
                Ok(d) => d,
                Err(e) => {
                    // Malformed emission: consume a step with an error
                    // observation; nothing reaches a tool, nothing is charged.
                    let step = Step {
                        index: self.next_index,
                        thought: String::new(),
                        action: Action::ToolCall {
                            tool: "<malformed>".to_string(),
                            args: BTreeMap::new(),
                        },
                        observation: format!("error: malformed policy emission: {e}"),
                    };
                    self.next_index += 1;
                    self.trajectory.segments.last_mut().expect("segment").push(step);
                    continue;
                }
            };
            match decision.action {
                Action::FinalAnswer { ref text } => {
                    let answer = text.clone();
                    let step = Step {
                        index: self.next_index,
                        thought: decision.thought,
                        action: decision.action,
                        observation: String::new(),
                    };
                    self.next_index += 1;
                    let seg = self.trajectory.segments.last_mut().expect("segment");
                    seg.push(step);
                    let steps_in_segment = seg.len();
                    self.trajectory.stop_reason = StopReason::Answered;
                    return Ok(SegmentOutcome {
                        stop: StopReason::Answered,
                        answer: Some(answer),
                        steps_in_segment,
                        tool_calls_in_segment,
                    });
                }
                Action::ToolCall { ref tool, ref args } => {
                    if self.trajectory.tool_calls_used >= self.config.tool_budget {
                        // The refused call is not recorded: the budget fence
                        // terminates the segment before the action lands.
                        self.trajectory.stop_reason = StopReason::BudgetExhausted;
                        return Ok(SegmentOutcome {
                            stop: StopReason::BudgetExhausted,
                            answer: None,
                            steps_in_segment: self
                                .trajectory
                                .segments
                                .last()
                                .expect("segment")
                                .len(),
                            tool_calls_in_segment,
                        });
                    }
                    let outcome = self.tools.execute(tool, args);
                    if outcome.charged {
                        self.trajectory.tool_calls_used += 1;
                        tool_calls_in_segment += 1;
                    }
                    let step = Step {
                        index: self.next_index,
                        thought: decision.thought,
                        action: decision.action,
                        observation: outcome.observation,
                    };
                    self.next_index += 1;
                    self.trajectory.segments.last_mut().expect("segment").push(step);
                }
            }
        }
    }

    /// Meter tool calls performed outside this session (e.g. a verifier's
    /// own rollout) against the cumulative budget, so the fence accounts for
    /// every metered interaction with the world.
    pub fn charge_external(&mut self, calls: usize) {
        self.trajectory.tool_calls_used += calls;
    }

    /// Discard-all reset: open a new empty segment. The next policy call
    /// sees exactly {system_prompt, query} (and the session preamble, if
    /// any); prior segments stay in the record. The tool budget is NOT
    /// refreshed — it is cumulative per question.
    pub fn discard_all_reset(&mut self, reason: ResetReason) {
        self.trajectory.segments.push(Vec::new());
        self.trajectory.reset_events.push(ResetEvent {
            epoch: self.trajectory.segments.len() - 1,
            reason,
        });
    }
}

/// Run until the policy answers, taking up to `config.max_resets` discard-all
/// resets on max-steps degeneration. Budget exhaustion always terminates.
pub fn run_rollout(
    policy: &dyn PolicyBackend,
    tools: &ToolLayer,
    system_prompt: &str,
    query: &str,
    config: RolloutConfig,
) -> Result<Trajectory> {
    if config.max_steps == 0 {
        return Err(Error::invalid("max_steps must be >= 1"));
    }
    let mut session = RolloutSession::new(policy, tools, system_prompt, query, config);
    let mut resets = 0usize;
    loop {
        let outcome = session.run_segment()?;
        match outcome.stop {
            StopReason::Answered | StopReason::BudgetExhausted => {
                return Ok(session.into_trajectory())
            }
            StopReason::MaxSteps => {
                if resets < config.max_resets {
                    resets += 1;
                    session.discard_all_reset(ResetReason::MaxStepsReached);
                } else {
                    return Ok(session.into_trajectory());
                }
            }
        }
    }
}

const TRAJ_SCHEMA: &str = "traj.v1";

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    schema: String,
    #[serde(flatten)]
    trajectory: Trajectory,
}

/// Serialize trajectories one per line, schema-tagged.
pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<()> {
    for traj in trajectories {
        let line = TrajectoryLine {
            schema: TRAJ_SCHEMA.to_string(),
            trajectory: traj.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// Read trajectories written by [`write_trajectories`].
pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if parsed.schema != TRAJ_SCHEMA {
            return Err(Error::Schema {
                line: idx + 1,
                msg: format!("unsupported schema {:?}", parsed.schema),
            });
        }
        out.push(parsed.trajectory);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::policy::{PolicyDecision, ScriptedPolicy};
    use super::*;
    use crate::world::generate::generate_world;
    use std::sync::Arc;

    fn search_call(q: &str) -> Action {
        let mut args = BTreeMap::new();
        args.insert("query".to_string(), q.to_string());
        Action::ToolCall {
            tool: "search".to_string(),
            args,
        }
    }

    fn answer(text: &str) -> Action {
        Action::FinalAnswer {
            text: text.to_string(),
        }
    }

    fn world_tools() -> ToolLayer {
        ToolLayer::for_world(Arc::new(generate_world(3, 10).unwrap()))
    }

    #[test]
    fn scripted_three_step_rollout() {
        let tools = world_tools();
        let name = "Archive";
        let policy = ScriptedPolicy::new(vec![
            PolicyDecision::new("look it up", search_call(name)),
            PolicyDecision::new("open the page", {
                let mut args = BTreeMap::new();
                args.insert("doc_id".to_string(), "d0".to_string());
                Action::ToolCall {
                    tool: "visit".to_string(),
                    args,
                }
            }),
            PolicyDecision::new("answer", answer("done")),
        ]);
        let traj =
            run_rollout(&policy, &tools, "sys", "q", RolloutConfig::default()).unwrap();
        assert_eq!(traj.total_steps(), 3);
        assert_eq!(traj.tool_calls_used, 2);
        assert_eq!(traj.final_answer(), Some("done"));
        assert_eq!(traj.stop_reason, StopReason::Answered);
    }

    #[test]
    fn zero_budget_terminates_before_any_tool_call() {
        let tools = world_tools();
        let policy = ScriptedPolicy::new(vec![PolicyDecision::new("try", search_call("x"))]);
        let config = RolloutConfig {
            tool_budget: 0,
            ..Default::default()
        };
        let traj = run_rollout(&policy, &tools, "sys", "q", config).unwrap();
        assert_eq!(traj.tool_calls_used, 0);
        assert_eq!(traj.total_steps(), 0);
        assert_eq!(traj.stop_reason, StopReason::BudgetExhausted);
    }

    #[test]
    fn budget_persists_across_resets() {
        let tools = world_tools();
        // Policy that always searches: each segment accumulates until max_steps.
        let policy = ScriptedPolicy::cycling(vec![PolicyDecision::new("s", search_call("q"))]);
        let config = RolloutConfig {
            max_steps: 3,
            tool_budget: 5,
            max_resets: 10,
        };
        let mut session = RolloutSession::new(&policy, &tools, "sys", "q", config);
        let first = session.run_segment().unwrap();
        assert_eq!(first.stop, StopReason::MaxSteps);
        assert_eq!(session.tool_calls_used(), 3);
        session.discard_all_reset(ResetReason::MaxStepsReached);
        let second = session.run_segment().unwrap();
        // only 2 budget units remained
        assert_eq!(second.stop, StopReason::BudgetExhausted);
        assert_eq!(session.tool_calls_used(), 5);
        let traj = session.into_trajectory();
        assert_eq!(traj.reset_events.len(), 1);
        assert_eq!(traj.segments.len(), 2);
        assert_eq!(traj.segments[1].len(), 2);
    }

    #[test]
    fn reset_purity_matches_fresh_context() {
        let tools = world_tools();
        let policy = ScriptedPolicy::cycling(vec![PolicyDecision::new("s", search_call("q"))]);
        let config = RolloutConfig {
            max_steps: 4,
            tool_budget: 100,
            max_resets: 0,
        };
        let fresh = RolloutSession::new(&policy, &tools, "sys", "the query", config);
        let fresh_render = fresh.visible_context().render();

        let mut session = RolloutSession::new(&policy, &tools, "sys", "the query", config);
        session.run_segment().unwrap();
        assert_ne!(session.visible_context().render(), fresh_render);
        session.discard_all_reset(ResetReason::MaxStepsReached);
        assert_eq!(session.visible_context().render(), fresh_render);
    }

    #[test]
    fn two_consecutive_resets_record_two_events() {
        let tools = world_tools();
        let policy = ScriptedPolicy::cycling(vec![PolicyDecision::new("s", search_call("q"))]);
        let mut session = RolloutSession::new(
            &policy,
            &tools,
            "sys",
            "q",
            RolloutConfig::default(),
        );
        session.discard_all_reset(ResetReason::FailedToSolve);
        session.discard_all_reset(ResetReason::MaxStepsReached);
        let traj = session.into_trajectory();
        assert_eq!(traj.reset_events.len(), 2);
        assert!(traj.segments.iter().all(Vec::is_empty));
        assert_eq!(traj.reset_events[0].epoch, 1);
        assert_eq!(traj.reset_events[1].epoch, 2);
    }

    #[test]
    fn unknown_tool_consumes_step_without_budget() {
        let tools = world_tools();
        let policy = ScriptedPolicy::new(vec![
            PolicyDecision::new("oops", Action::ToolCall {
                tool: "teleport".to_string(),
                args: BTreeMap::new(),
            }),
            PolicyDecision::new("done", answer("x")),
        ]);
        let traj =
            run_rollout(&policy, &tools, "sys", "q", RolloutConfig::default()).unwrap();
        assert_eq!(traj.total_steps(), 2);
        assert_eq!(traj.tool_calls_used, 0);
        assert!(traj.segments[0][0].observation.contains("unknown tool"));
    }

    #[test]
    fn degeneration_detection_rules() {
        assert_eq!(
            detect_degeneration(20, 20, false),
            Some(DegenerationTrigger::MaxStepsReached)
        );
        assert_eq!(detect_degeneration(5, 20, false), None);
        assert_eq!(
            detect_degeneration(5, 20, true),
            Some(DegenerationTrigger::FailedToSolve)
        );
    }

    #[test]
    fn trajectory_serialization_round_trips() {
        let tools = world_tools();
        let policy = ScriptedPolicy::new(vec![
            PolicyDecision::new("s", search_call("archive")),
            PolicyDecision::new("a", answer("done")),
        ]);
        let traj =
            run_rollout(&policy, &tools, "sys", "q", RolloutConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, std::slice::from_ref(&traj)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"schema\":\"traj.v1\""));
        let restored = read_trajectories(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(restored.len(), 1);
        assert_eq!(restored[0], traj);
    }

    #[test]
    fn replay_determinism() {
        let tools = world_tools();
        let script = vec![
            PolicyDecision::new("s", search_call("gilded")),
            PolicyDecision::new("a", answer("done")),
        ];
        let run = |script: Vec<PolicyDecision>| {
            let policy = ScriptedPolicy::new(script);
            let traj =
                run_rollout(&policy, &tools, "sys", "q", RolloutConfig::default()).unwrap();
            let mut buf = Vec::new();
            write_trajectories(&mut buf, &[traj]).unwrap();
            buf
        };
        assert_eq!(run(script.clone()), run(script));
    }
}
