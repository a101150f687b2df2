//! Answer judging: rule-based matching and the two-stage escalation pipeline.
//!
//! Rule matching handles exact, normalized, and numeric-tolerant comparison
//! against a reference. Model-based judging goes through [`JudgeBackend`]; a
//! fast primary backend sees every sample and uncertain or low-confidence
//! verdicts escalate to a (slower, stronger) secondary backend whose verdict
//! is final.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retry::{RetryPolicy, Sleeper};
use crate::text::{normalize_answer, tokenize};

/// Judge label for an (output, reference) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeLabel {
    Correct,
    Incorrect,
    Uncertain,
}

/// Which layer produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeStage {
    Rule,
    Primary,
    Secondary,
}

/// A verdict with its confidence and originating stage.
///
/// Invariant: rule-stage verdicts are never uncertain — a rule either
/// matches or it does not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub label: JudgeLabel,
    pub confidence: f64,
    pub stage: JudgeStage,
}

impl JudgeVerdict {
    pub fn new(label: JudgeLabel, confidence: f64, stage: JudgeStage) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid("confidence must be in [0,1]"));
        }
        if stage == JudgeStage::Rule && label == JudgeLabel::Uncertain {
            return Err(Error::invalid("rule-stage verdicts cannot be uncertain"));
        }
        Ok(Self {
            label,
            confidence,
            stage,
        })
    }
}

/// Binary outcome reward: 1 iff the verdict is correct.
pub fn outcome_reward(verdict: &JudgeVerdict) -> f64 {
    if verdict.label == JudgeLabel::Correct {
        1.0
    } else {
        0.0
    }
}

/// Comparison mode for [`rule_match`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Normalized,
    NumericTolerant,
}

/// A matching rule: mode plus the relative tolerance used in numeric mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchRule {
    pub mode: MatchMode,
    pub numeric_rel_tol: f64,
}

impl MatchRule {
    pub fn exact() -> Self {
        Self {
            mode: MatchMode::Exact,
            numeric_rel_tol: 0.0,
        }
    }

    pub fn normalized() -> Self {
        Self {
            mode: MatchMode::Normalized,
            numeric_rel_tol: 0.0,
        }
    }

    pub fn numeric(rel_tol: f64) -> Self {
        Self {
            mode: MatchMode::NumericTolerant,
            numeric_rel_tol: rel_tol,
        }
    }
}

/// Split a string into (leading number, unit remainder), if it starts with a
/// number after trimming. "42 km" → (42.0, "km"); "-3.5e2 m" → (-350.0, "m").
fn parse_leading_number(text: &str) -> Option<(f64, String)> {
    let trimmed = text.trim();
    let mut end = 0;
    let bytes = trimmed.as_bytes();
    let mut seen_digit = false;
    while end < bytes.len() {
        let c = bytes[end] as char;
        let numeric_char = c.is_ascii_digit()
            || c == '.'
            || (end == 0 && (c == '-' || c == '+'))
            || ((c == 'e' || c == 'E') && seen_digit && {
                // accept exponent only when followed by digits or sign+digits
                let rest = &trimmed[end + 1..];
                rest.starts_with(|r: char| r.is_ascii_digit())
                    || (rest.starts_with(['-', '+'])
                        && rest[1..].starts_with(|r: char| r.is_ascii_digit()))
            })
            || ((c == '-' || c == '+') && end > 0 && matches!(bytes[end - 1] as char, 'e' | 'E'));
        if !numeric_char {
            break;
        }
        if c.is_ascii_digit() {
            seen_digit = true;
        }
        end += 1;
    }
    if !seen_digit {
        return None;
    }
    let number: f64 = trimmed[..end].parse().ok()?;
    let unit: String = trimmed[end..]
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    Some((number, unit))
}

/// Match an output string against a reference under the given rule.
///
/// - exact: byte equality.
/// - normalized: equality after lowercasing, whitespace collapsing, and
///   terminal-punctuation stripping.
/// - numeric-tolerant: normalized equality wins immediately (keeps the rule
///   reflexive for non-numeric strings); otherwise both sides must parse as
///   a leading number, agree within the relative tolerance, and carry the
///   same unit after lowercasing and whitespace removal. Unparseable input
///   is a non-match, not an error.
pub fn rule_match(output: &str, reference: &str, rule: &MatchRule) -> bool {
    match rule.mode {
        MatchMode::Exact => output == reference,
        MatchMode::Normalized => normalize_answer(output) == normalize_answer(reference),
        MatchMode::NumericTolerant => {
            if normalize_answer(output) == normalize_answer(reference) {
                return true;
            }
            let (Some((a, unit_a)), Some((b, unit_b))) =
                (parse_leading_number(output), parse_leading_number(reference))
            else {
                return false;
            };
            if unit_a != unit_b {
                return false;
            }
            let scale = a.abs().max(b.abs());
            if scale == 0.0 {
                return a == b;
            }
            (a - b).abs() <= rule.numeric_rel_tol * scale
        }
    }
}

/// Rule-stage verdict wrapper: correct iff the rule matches.
pub fn rule_verdict(output: &str, reference: &str, rule: &MatchRule) -> JudgeVerdict {
    let label = if rule_match(output, reference, rule) {
        JudgeLabel::Correct
    } else {
        JudgeLabel::Incorrect
    };
    JudgeVerdict {
        label,
        confidence: 1.0,
        stage: JudgeStage::Rule,
    }
}

/// What a model backend reports before staging information is attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub label: JudgeLabel,
    pub confidence: f64,
}

/// A judging backend: given the question, the produced output, and the
/// reference answer, report a label and self-assessed confidence.
pub trait JudgeBackend: Send + Sync {
    fn assess(&self, query: &str, output: &str, reference: &str) -> Result<Assessment>;
}

/// Scripted backend for tests: plays back a fixed assessment stream and
/// counts invocations.
pub struct MockJudge {
    script: Mutex<std::vec::IntoIter<Result<Assessment>>>,
    calls: AtomicUsize,
    fallback: Assessment,
}

impl MockJudge {
    pub fn new(script: Vec<Result<Assessment>>) -> Self {
        Self {
            script: Mutex::new(script.into_iter()),
            calls: AtomicUsize::new(0),
            fallback: Assessment {
                label: JudgeLabel::Uncertain,
                confidence: 0.5,
            },
        }
    }

    /// Backend that always reports the same assessment.
    pub fn constant(label: JudgeLabel, confidence: f64) -> Self {
        Self {
            script: Mutex::new(Vec::new().into_iter()),
            calls: AtomicUsize::new(0),
            fallback: Assessment { label, confidence },
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl JudgeBackend for MockJudge {
    fn assess(&self, _query: &str, _output: &str, _reference: &str) -> Result<Assessment> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.script.lock().expect("mock judge lock").next() {
            Some(a) => a,
            None => Ok(self.fallback),
        }
    }
}

/// Deterministic offline backend: normalized match is correct, high token
/// overlap with the reference is uncertain (defer to a stronger judge),
/// anything else is incorrect.
pub struct HeuristicJudge {
    /// Overlap ratio in [0,1] at or above which a non-matching answer is
    /// reported uncertain instead of incorrect.
    pub uncertain_overlap: f64,
}

impl Default for HeuristicJudge {
    fn default() -> Self {
        Self {
            uncertain_overlap: 0.5,
        }
    }
}

impl JudgeBackend for HeuristicJudge {
    fn assess(&self, _query: &str, output: &str, reference: &str) -> Result<Assessment> {
        if normalize_answer(output) == normalize_answer(reference) {
            return Ok(Assessment {
                label: JudgeLabel::Correct,
                confidence: 0.95,
            });
        }
        let out_tokens: std::collections::BTreeSet<String> = tokenize(output).into_iter().collect();
        let ref_tokens: std::collections::BTreeSet<String> =
            tokenize(reference).into_iter().collect();
        if ref_tokens.is_empty() {
            return Ok(Assessment {
                label: JudgeLabel::Incorrect,
                confidence: 0.9,
            });
        }
        let overlap = out_tokens.intersection(&ref_tokens).count() as f64 / ref_tokens.len() as f64;
        if overlap >= self.uncertain_overlap {
            Ok(Assessment {
                label: JudgeLabel::Uncertain,
                confidence: overlap.min(0.65),
            })
        } else {
            Ok(Assessment {
                label: JudgeLabel::Incorrect,
                confidence: 0.9,
            })
        }
    }
}

/// Two-stage pipeline configuration: escalate to the secondary backend when
/// the primary is uncertain or its confidence falls below the threshold.
pub struct TwoStageJudge<'a> {
    pub primary: &'a dyn JudgeBackend,
    pub secondary: &'a dyn JudgeBackend,
    pub escalate_below: f64,
    pub retry: RetryPolicy,
    pub sleeper: &'a dyn Sleeper,
}

impl<'a> TwoStageJudge<'a> {
    pub fn new(primary: &'a dyn JudgeBackend, secondary: &'a dyn JudgeBackend) -> Self {
        Self {
            primary,
            secondary,
            escalate_below: 0.7,
            retry: RetryPolicy::immediate(3),
            sleeper: &crate::retry::NO_SLEEP,
        }
    }

    fn assess_with_retry(
        &self,
        backend: &dyn JudgeBackend,
        query: &str,
        output: &str,
        reference: &str,
    ) -> Result<Assessment> {
        self.retry
            .run(self.sleeper, |_| backend.assess(query, output, reference))
            .result
    }

    /// Judge one sample. The primary always runs; escalation hands the final
    /// word to the secondary. Backend failures are retried; if both stages
    /// ultimately fail, the verdict is uncertain with confidence 0.
    pub fn judge(&self, query: &str, output: &str, reference: &str) -> JudgeVerdict {
        let primary = self.assess_with_retry(self.primary, query, output, reference);
        let escalate = match &primary {
            Ok(a) => a.label == JudgeLabel::Uncertain || a.confidence < self.escalate_below,
            Err(_) => true,
        };
        if !escalate {
            let a = primary.expect("checked above");
            return JudgeVerdict {
                label: a.label,
                confidence: a.confidence,
                stage: JudgeStage::Primary,
            };
        }
        match self.assess_with_retry(self.secondary, query, output, reference) {
            Ok(a) => JudgeVerdict {
                label: a.label,
                confidence: a.confidence,
                stage: JudgeStage::Secondary,
            },
            Err(_) => JudgeVerdict {
                label: JudgeLabel::Uncertain,
                confidence: 0.0,
                stage: JudgeStage::Secondary,
            },
        }
    }
}

/// One line of judge I/O: the sample plus the verdict rendered on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub query: String,
    pub output: String,
    pub reference: String,
    pub verdict: JudgeLabel,
    pub stage: JudgeStage,
    pub confidence: f64,
}
