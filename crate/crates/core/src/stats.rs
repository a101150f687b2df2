//! Trajectory and dataset analytics: token-count and tool-round
//! distributions over trajectory files, answerable-rate computation over
//! judged datasets, and plot-ready CSV export.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::JudgeLabel;
use crate::runtime::{read_trajectories, Trajectory};
use crate::synth::QAItem;
use crate::text::count_tokens;

/// Token-counting hook. The default is [`count_tokens`]'s documented
/// splitter (alphanumeric runs plus standalone punctuation) so numbers are
/// backend-independent; swap in a backend tokenizer via the `_with`
/// variants when exact model tokens matter.
pub type Tokenizer = fn(&str) -> usize;

/// Per-trajectory measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub tokens: usize,
    pub tool_rounds: usize,
}

/// One histogram bucket over a doubling scale: `0`, `1`, `2-3`, `4-7`, …
/// Only non-empty buckets are kept, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub label: String,
    pub lo: usize,
    pub count: usize,
}

/// Aggregates over one measured series. `median` averages the two middle
/// values for even sample counts; `p90` is the nearest-rank 90th
/// percentile. All fields are recomputable from the per-sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub histogram: Vec<HistogramBucket>,
}

impl Aggregate {
    fn empty() -> Self {
        Self {
            mean: 0.0,
            median: 0.0,
            p90: 0.0,
            histogram: Vec::new(),
        }
    }
}

/// Distribution summary of a trajectory file: the raw per-sample values
/// plus aggregates for both series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub samples: Vec<SampleStats>,
    pub tokens: Aggregate,
    pub tool_rounds: Aggregate,
}

/// Doubling-scale bucket floor for a value: 0 → 0, otherwise the largest
/// power of two not exceeding the value.
fn bucket_floor(value: usize) -> usize {
    if value == 0 {
        0
    } else {
        let bits = usize::BITS - 1 - value.leading_zeros();
        1usize << bits
    }
}

fn bucket_label(lo: usize) -> String {
    if lo <= 1 {
        lo.to_string()
    } else {
        format!("{}-{}", lo, lo * 2 - 1)
    }
}

fn build_histogram(values: &[usize]) -> Vec<HistogramBucket> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(bucket_floor(v)).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(lo, count)| HistogramBucket {
            label: bucket_label(lo),
            lo,
            count,
        })
        .collect()
}

fn aggregate(values: &[usize]) -> Aggregate {
    if values.is_empty() {
        return Aggregate::empty();
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let p90_rank = ((0.9 * n as f64).ceil() as usize).max(1);
    let p90 = sorted[p90_rank - 1] as f64;
    Aggregate {
        mean,
        median,
        p90,
        histogram: build_histogram(values),
    }
}

/// Token count for one trajectory: the query plus every step's thought,
/// rendered action, and observation. The system prompt is excluded — it is
/// constant per run and would only shift every sample by the same amount.
pub fn sample_tokens(trajectory: &Trajectory, tokenizer: Tokenizer) -> usize {
    let mut total = tokenizer(&trajectory.query);
    for step in trajectory.all_steps() {
        total += tokenizer(&step.thought);
        total += tokenizer(&step.action.render());
        total += tokenizer(&step.observation);
    }
    total
}

/// Measure a slice of in-memory trajectories.
pub fn stats_from_trajectories(trajectories: &[Trajectory], tokenizer: Tokenizer) -> TrajectoryStats {
    let samples: Vec<SampleStats> = trajectories
        .iter()
        .map(|t| SampleStats {
            tokens: sample_tokens(t, tokenizer),
            tool_rounds: t.tool_calls_used,
        })
        .collect();
    let token_values: Vec<usize> = samples.iter().map(|s| s.tokens).collect();
    let round_values: Vec<usize> = samples.iter().map(|s| s.tool_rounds).collect();
    TrajectoryStats {
        tokens: aggregate(&token_values),
        tool_rounds: aggregate(&round_values),
        samples,
    }
}

/// Parse a trajectory file and measure it with a custom tokenizer.
/// Malformed lines fail with their line number.
pub fn compute_stats_with<R: BufRead>(input: R, tokenizer: Tokenizer) -> Result<TrajectoryStats> {
    let trajectories = read_trajectories(input)?;
    Ok(stats_from_trajectories(&trajectories, tokenizer))
}

/// Parse a trajectory file and measure it with the default tokenizer.
pub fn compute_stats<R: BufRead>(input: R) -> Result<TrajectoryStats> {
    compute_stats_with(input, count_tokens)
}

/// Render the histograms as a plot-ready CSV table with fixed columns
/// `bucket,count,series`; one series per measured distribution.
pub fn write_csv<W: Write>(mut out: W, stats: &TrajectoryStats) -> Result<()> {
    writeln!(out, "bucket,count,series")?;
    for bucket in &stats.tokens.histogram {
        writeln!(out, "{},{},tokens", bucket.label, bucket.count)?;
    }
    for bucket in &stats.tool_rounds.histogram {
        writeln!(out, "{},{},tool_rounds", bucket.label, bucket.count)?;
    }
    Ok(())
}

/// Schema tag for solver-result lines.
pub const RESULTS_SCHEMA: &str = "results.v1";

/// One judged solver result: which item it answers and the judge's label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: String,
    pub label: JudgeLabel,
}

#[derive(Serialize, Deserialize)]
struct ResultLine {
    schema: String,
    #[serde(flatten)]
    record: ResultRecord,
}

pub fn write_results<W: Write>(mut out: W, records: &[ResultRecord]) -> Result<()> {
    for record in records {
        let line = ResultLine {
            schema: RESULTS_SCHEMA.to_string(),
            record: record.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(input: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if parsed.schema != RESULTS_SCHEMA {
            return Err(Error::Schema {
                line: idx + 1,
                msg: format!("expected schema {RESULTS_SCHEMA:?}, got {:?}", parsed.schema),
            });
        }
        out.push(parsed.record);
    }
    Ok(out)
}

/// Fraction of dataset items judged correct. Every item id must appear in
/// the results (missing ids are collected into one error); when an id
/// appears more than once the last record wins. Input order never affects
/// the rate.
pub fn answerable_rate(items: &[QAItem], results: &[ResultRecord]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("answerable rate needs at least one item"));
    }
    let mut by_id: BTreeMap<&str, JudgeLabel> = BTreeMap::new();
    for record in results {
        by_id.insert(record.id.as_str(), record.label);
    }
    let missing: Vec<String> = items
        .iter()
        .filter(|item| !by_id.contains_key(item.id.as_str()))
        .map(|item| item.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let correct = items
        .iter()
        .filter(|item| by_id[item.id.as_str()] == JudgeLabel::Correct)
        .count();
    Ok(correct as f64 / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{write_trajectories, Action, Step};
    use crate::synth::{ConstraintSet, Provenance};

    fn trajectory_with(rounds: usize, words: usize) -> Trajectory {
        let mut traj = Trajectory::new("system", "the query");
        traj.tool_calls_used = rounds;
        traj.segments[0].push(Step {
            index: 0,
            thought: vec!["word"; words].join(" "),
            action: Action::FinalAnswer {
                text: "done".to_string(),
            },
            observation: String::new(),
        });
        traj
    }

    fn qa_item(id: &str) -> QAItem {
        QAItem {
            id: id.to_string(),
            question: format!("which entity is {id}?"),
            answer: "Answer".to_string(),
            answer_entity_id: "e0".to_string(),
            constraint_set: ConstraintSet::default(),
            intermediates: Vec::new(),
            provenance: Provenance::Graph,
            verified: true,
            rounds_used: 1,
        }
    }

    fn results_for(ids: &[&str], correct: usize) -> Vec<ResultRecord> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| ResultRecord {
                id: id.to_string(),
                label: if i < correct {
                    JudgeLabel::Correct
                } else {
                    JudgeLabel::Incorrect
                },
            })
            .collect()
    }

    #[test]
    fn tool_round_fixture_matches_hand_arithmetic() {
        let trajectories: Vec<Trajectory> =
            [2, 5, 9].iter().map(|&r| trajectory_with(r, 3)).collect();
        let stats = stats_from_trajectories(&trajectories, count_tokens);
        assert_eq!(stats.samples.len(), 3);
        assert!((stats.tool_rounds.mean - 16.0 / 3.0).abs() < 1e-12);
        assert_eq!(stats.tool_rounds.median, 5.0);
        assert_eq!(stats.tool_rounds.p90, 9.0);
    }

    #[test]
    fn empty_input_yields_zero_samples_and_empty_aggregates() {
        let stats = compute_stats(&b""[..]).unwrap();
        assert!(stats.samples.is_empty());
        assert_eq!(stats.tokens, Aggregate::empty());
        assert_eq!(stats.tool_rounds, Aggregate::empty());
    }

    #[test]
    fn single_trajectory_aggregates_equal_the_sample() {
        let stats = stats_from_trajectories(&[trajectory_with(4, 6)], count_tokens);
        let sample = stats.samples[0];
        assert_eq!(stats.tool_rounds.mean, sample.tool_rounds as f64);
        assert_eq!(stats.tool_rounds.median, sample.tool_rounds as f64);
        assert_eq!(stats.tool_rounds.p90, sample.tool_rounds as f64);
        assert_eq!(stats.tokens.mean, sample.tokens as f64);
        assert_eq!(
            stats.tool_rounds.histogram,
            vec![HistogramBucket {
                label: "4-7".to_string(),
                lo: 4,
                count: 1
            }]
        );
    }

    #[test]
    fn histogram_counts_sum_to_sample_count() {
        let trajectories: Vec<Trajectory> = (0..37)
            .map(|i| trajectory_with((i * 7) % 23, (i % 5) + 1))
            .collect();
        let stats = stats_from_trajectories(&trajectories, count_tokens);
        for series in [&stats.tokens, &stats.tool_rounds] {
            let total: usize = series.histogram.iter().map(|b| b.count).sum();
            assert_eq!(total, stats.samples.len());
            for pair in series.histogram.windows(2) {
                assert!(pair[0].lo < pair[1].lo, "buckets must ascend");
            }
            assert!(series.histogram.iter().all(|b| b.count > 0));
        }
    }

    #[test]
    fn aggregates_are_recomputable_from_samples() {
        let trajectories: Vec<Trajectory> =
            (0..10).map(|i| trajectory_with(i, i + 1)).collect();
        let stats = stats_from_trajectories(&trajectories, count_tokens);
        let mean = stats.samples.iter().map(|s| s.tool_rounds).sum::<usize>() as f64
            / stats.samples.len() as f64;
        assert_eq!(stats.tool_rounds.mean, mean);
    }

    #[test]
    fn file_round_trip_and_malformed_line_number() {
        let mut buf = Vec::new();
        let trajectories: Vec<Trajectory> =
            [2, 5, 9].iter().map(|&r| trajectory_with(r, 2)).collect();
        write_trajectories(&mut buf, &trajectories).unwrap();
        let stats = compute_stats(&buf[..]).unwrap();
        assert!((stats.tool_rounds.mean - 16.0 / 3.0).abs() < 1e-12);

        let mut broken = Vec::new();
        write_trajectories(&mut broken, &trajectories[..1]).unwrap();
        broken.extend_from_slice(b"{not json\n");
        match compute_stats(&broken[..]) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error with line, got {other:?}"),
        }
    }

    #[test]
    fn csv_is_plot_ready_with_fixed_columns() {
        let trajectories: Vec<Trajectory> =
            [0, 1, 5].iter().map(|&r| trajectory_with(r, 2)).collect();
        let stats = stats_from_trajectories(&trajectories, count_tokens);
        let mut buf = Vec::new();
        write_csv(&mut buf, &stats).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("bucket,count,series"));
        let rows: Vec<&str> = lines.collect();
        assert!(rows.iter().any(|r| r.ends_with(",tokens")));
        assert!(rows.iter().any(|r| r.ends_with(",tool_rounds")));
        for row in rows {
            assert_eq!(row.split(',').count(), 3);
        }
    }

    #[test]
    fn tokenizer_hook_overrides_the_default() {
        let trajectories = vec![trajectory_with(1, 50)];
        let stats = stats_from_trajectories(&trajectories, |_| 1);
        // query + thought + action + observation, one "token" each
        assert_eq!(stats.samples[0].tokens, 4);
    }

    #[test]
    fn answerable_rate_matches_hand_fractions() {
        let ids: Vec<String> = (0..100).map(|i| format!("qa-{i:03}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let items: Vec<QAItem> = id_refs.iter().map(|id| qa_item(id)).collect();
        let results = results_for(&id_refs, 29);
        assert!((answerable_rate(&items, &results).unwrap() - 0.29).abs() < 1e-12);
        let none = results_for(&id_refs, 0);
        assert_eq!(answerable_rate(&items, &none).unwrap(), 0.0);
        let all = results_for(&id_refs, 100);
        assert_eq!(answerable_rate(&items, &all).unwrap(), 1.0);
    }

    #[test]
    fn answerable_rate_is_permutation_invariant() {
        let ids = ["qa-a", "qa-b", "qa-c", "qa-d"];
        let items: Vec<QAItem> = ids.iter().map(|id| qa_item(id)).collect();
        let mut results = results_for(&ids, 2);
        let forward = answerable_rate(&items, &results).unwrap();
        results.reverse();
        let backward = answerable_rate(&items, &results).unwrap();
        assert_eq!(forward, backward);
        assert_eq!(forward, 0.5);
    }

    #[test]
    fn missing_ids_are_collected_into_one_error() {
        let items: Vec<QAItem> = ["qa-a", "qa-b", "qa-c"].iter().map(|id| qa_item(id)).collect();
        let results = results_for(&["qa-b"], 1);
        match answerable_rate(&items, &results) {
            Err(Error::MissingIds(ids)) => assert_eq!(ids, vec!["qa-a", "qa-c"]),
            other => panic!("expected MissingIds, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(answerable_rate(&[], &[]).is_err());
    }

    #[test]
    fn results_round_trip_and_schema_guard() {
        let records = results_for(&["qa-a", "qa-b"], 1);
        let mut buf = Vec::new();
        write_results(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"schema\":\"results.v1\""));
        assert_eq!(read_results(&buf[..]).unwrap(), records);

        let bad = b"{\"schema\":\"other.v9\",\"id\":\"x\",\"label\":\"correct\"}\n";
        assert!(matches!(
            read_results(&bad[..]),
            Err(Error::Schema { line: 1, .. })
        ));
    }
}
