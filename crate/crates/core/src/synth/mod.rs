//! Question/answer synthesis over the simulated world.
//!
//! Shared machinery lives here: constraint sets, QA items, the brute-force
//! satisfier oracle, question rendering, leakage checks, and dataset IO.
//! [`graph`] builds items answer-first from the knowledge graph with
//! adversarial uniqueness verification; [`agent`] builds them from
//! tool-explored evidence with multi-stage verification and revision.

pub mod agent;
pub mod graph;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_ws_lower;
use crate::world::generate::{render_clause, INTRO_VARIANTS};
use crate::world::{AttributeDimension, Fact, World};

/// An entity's facts grouped by dimension. All five dimensions always appear
/// as keys, empty lists included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub entity_id: String,
    pub facts: BTreeMap<AttributeDimension, Vec<Fact>>,
}

impl AttributeProfile {
    /// Flattened (dimension, fact) view in dimension order.
    pub fn flat(&self) -> Vec<(AttributeDimension, &Fact)> {
        AttributeDimension::ALL
            .iter()
            .flat_map(|dim| {
                self.facts
                    .get(dim)
                    .into_iter()
                    .flatten()
                    .map(move |f| (*dim, f))
            })
            .collect()
    }
}

/// One question constraint. `obfuscated` marks generator-seeded constraints
/// that went through value obfuscation during synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub dimension: AttributeDimension,
    pub predicate: String,
    pub value: String,
    pub obfuscated: bool,
}

impl Constraint {
    pub fn key(&self) -> (AttributeDimension, &str, &str) {
        (self.dimension, &self.predicate, &self.value)
    }
}

/// Ordered, duplicate-free constraint list with the round each entry joined.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
    round_added: Vec<usize>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a constraint tagged with the round it was added. Rejects
    /// duplicates and decreasing round indices.
    pub fn push(&mut self, constraint: Constraint, round: usize) -> Result<()> {
        if self.constraints.iter().any(|c| c.key() == constraint.key()) {
            return Err(Error::invalid(format!(
                "duplicate constraint {:?} {:?}",
                constraint.predicate, constraint.value
            )));
        }
        if let Some(last) = self.round_added.last() {
            if round < *last {
                return Err(Error::invalid("round_added must be non-decreasing"));
            }
        }
        self.constraints.push(constraint);
        self.round_added.push(round);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn rounds(&self) -> &[usize] {
        &self.round_added
    }

    pub fn contains_fact(&self, dim: AttributeDimension, fact: &Fact) -> bool {
        self.constraints
            .iter()
            .any(|c| c.key() == (dim, fact.predicate.as_str(), fact.value.as_str()))
    }

    /// Dimensions already represented in the set.
    pub fn used_dimensions(&self) -> Vec<AttributeDimension> {
        let mut dims: Vec<AttributeDimension> =
            self.constraints.iter().map(|c| c.dimension).collect();
        dims.sort();
        dims.dedup();
        dims
    }

    /// Remove the constraint at `index`, keeping order.
    pub fn remove(&mut self, index: usize) -> Constraint {
        self.round_added.remove(index);
        self.constraints.remove(index)
    }
}

/// Where an item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Graph,
    Agent,
}

/// A synthesized QA item. `verified` means the brute-force satisfier oracle
/// confirmed the answer is the unique entity meeting every constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub answer_entity_id: String,
    pub constraint_set: ConstraintSet,
    pub intermediates: Vec<String>,
    pub provenance: Provenance,
    pub verified: bool,
    pub rounds_used: usize,
}

/// Brute-force uniqueness oracle: every entity satisfying all constraints by
/// exact (predicate, value) fact membership, in ascending id order.
pub fn satisfiers(world: &World, constraints: &[Constraint]) -> Vec<String> {
    world
        .entities()
        .filter(|e| {
            constraints
                .iter()
                .all(|c| e.has_fact(c.dimension, &c.predicate, &c.value))
        })
        .map(|e| e.id.clone())
        .collect()
}

/// Render a constraint set as one question. Every constraint becomes exactly
/// one clause; the opener is picked by `template_seed`. Deterministic.
pub fn render_question(set: &ConstraintSet, template_seed: u64) -> Result<String> {
    if set.is_empty() {
        return Err(Error::invalid("cannot render an empty constraint set"));
    }
    let intro = INTRO_VARIANTS[(template_seed as usize) % INTRO_VARIANTS.len()];
    let clauses: Vec<String> = set
        .constraints()
        .iter()
        .map(|c| render_clause(&c.predicate, &c.value))
        .collect();
    Ok(format!("{intro} {}?", clauses.join("; ")))
}

/// Result of a leakage check: offending spans are byte ranges into the
/// normalized question where the normalized answer name appears.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub pass: bool,
    pub spans: Vec<(usize, usize)>,
}

/// Fail iff the answer name (case-insensitive, whitespace-normalized)
/// appears as a substring of the question.
pub fn leakage_check(question: &str, answer_name: &str) -> LeakageReport {
    let hay = normalize_ws_lower(question);
    let needle = normalize_ws_lower(answer_name);
    if needle.is_empty() {
        return LeakageReport {
            pass: true,
            spans: Vec::new(),
        };
    }
    let mut spans = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        spans.push((start, start + needle.len()));
        from = start + 1;
    }
    LeakageReport {
        pass: spans.is_empty(),
        spans,
    }
}

/// Derive a per-entity RNG stream from a base seed and an entity id, so item
/// synthesis is deterministic per (world seed, answer) without coupling
/// entities to each other.
pub fn entity_rng(base_seed: u64, entity_id: &str) -> rand_chacha::ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in entity_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    rand_chacha::ChaCha8Rng::seed_from_u64(base_seed ^ h)
}

const QA_SCHEMA: &str = "qa.v1";

#[derive(Serialize, Deserialize)]
struct QaLine {
    schema: String,
    #[serde(flatten)]
    item: QAItem,
}

/// Write QA items one JSON record per line, schema-tagged.
pub fn write_dataset<W: Write>(mut out: W, items: &[QAItem]) -> Result<()> {
    for item in items {
        let line = QaLine {
            schema: QA_SCHEMA.to_string(),
            item: item.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<QAItem>> {
    let mut items = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: QaLine = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if parsed.schema != QA_SCHEMA {
            return Err(Error::Schema {
                line: idx + 1,
                msg: format!("unsupported schema {:?}", parsed.schema),
            });
        }
        items.push(parsed.item);
    }
    Ok(items)
}
