//! Exploration-driven QA synthesis.
//!
//! An explorer policy walks the world through the tool layer; facts it
//! surfaces become an evidence graph. Questions are composed over that
//! graph, then pushed through a multi-stage verifier (grounding →
//! independent solve → uniqueness). Failures come back as typed diagnostics
//! that drive a bounded revision loop.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    entity_rng, leakage_check, render_question, satisfiers, AttributeProfile, Constraint,
    ConstraintSet, Provenance, QAItem,
};
use crate::error::{Error, Result};
use crate::runtime::policy::{PolicyBackend, SimSolverPolicy};
use crate::runtime::tools::ToolLayer;
use crate::runtime::{run_rollout, RolloutConfig};
use crate::world::generate::{render_clause, render_fact_sentence, subjects_in_body};
use crate::world::{AttributeDimension, World};

/// One fact surfaced during exploration, tied to the document that proves it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EvidenceNode {
    pub doc_id: String,
    pub subject_entity_id: String,
    pub predicate: String,
    pub value: String,
    pub dimension: AttributeDimension,
}

/// Evidence surfaced by one exploration episode: nodes are grounded facts,
/// edges link facts sharing a document or a subject.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct EvidenceGraph {
    pub nodes: Vec<EvidenceNode>,
    /// (node index, node index, label); label ∈ {co_document, same_subject}.
    pub edges: Vec<(usize, usize, String)>,
}

impl EvidenceGraph {
    /// Subjects with at least `min_facts` distinct facts, ascending id.
    pub fn subjects_with_facts(&self, min_facts: usize) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for node in &self.nodes {
            *counts.entry(node.subject_entity_id.as_str()).or_default() += 1;
        }
        let mut ids: Vec<String> = counts
            .into_iter()
            .filter(|(_, n)| *n >= min_facts)
            .map(|(id, _)| id.to_string())
            .collect();
        ids.sort_by(|a, b| crate::world::id_order(a, b));
        ids
    }

    pub fn nodes_for_subject(&self, entity_id: &str) -> Vec<&EvidenceNode> {
        self.nodes
            .iter()
            .filter(|n| n.subject_entity_id == entity_id)
            .collect()
    }
}

/// Explore the world with `policy` under a tool budget and distill visited
/// documents into an evidence graph. Facts are recovered by matching stored
/// fact sentences against visited page bodies.
pub fn build_evidence_graph(
    world: &Arc<World>,
    policy: &dyn PolicyBackend,
    query: &str,
    tool_budget: usize,
) -> Result<EvidenceGraph> {
    if tool_budget == 0 {
        return Err(Error::invalid("exploration budget must be at least 1"));
    }
    let tools = ToolLayer::for_world(Arc::clone(world));
    let config = RolloutConfig {
        tool_budget,
        ..RolloutConfig::default()
    };
    let trajectory = run_rollout(
        policy,
        &tools,
        "You explore a knowledge base with search and visit tools.",
        query,
        config,
    )?;

    // visited doc ids, in first-visit order, deduped
    let mut visited: Vec<String> = Vec::new();
    for step in trajectory.all_steps() {
        if let crate::runtime::Action::ToolCall { tool, args } = &step.action {
            if tool == "visit" {
                if let Some(doc_id) = args.get("doc_id") {
                    if !step.observation.starts_with("error:")
                        && !visited.iter().any(|d| d == doc_id)
                    {
                        visited.push(doc_id.clone());
                    }
                }
            }
        }
    }

    let mut graph = EvidenceGraph::default();
    for doc_id in &visited {
        let doc = world.document(doc_id)?;
        for eid in &doc.entity_ids {
            let entity = world.entity(eid)?;
            for (dim, fact) in entity.all_facts() {
                let sentence = render_fact_sentence(&entity.name, &fact.predicate, &fact.value);
                if doc.body.contains(&sentence) {
                    graph.nodes.push(EvidenceNode {
                        doc_id: doc_id.clone(),
                        subject_entity_id: eid.clone(),
                        predicate: fact.predicate.clone(),
                        value: fact.value.clone(),
                        dimension: dim,
                    });
                }
            }
        }
    }
    if graph.nodes.is_empty() {
        return Err(Error::EmptyEvidence);
    }
    for i in 0..graph.nodes.len() {
        for j in (i + 1)..graph.nodes.len() {
            if graph.nodes[i].doc_id == graph.nodes[j].doc_id {
                graph.edges.push((i, j, "co_document".to_string()));
            }
            if graph.nodes[i].subject_entity_id == graph.nodes[j].subject_entity_id {
                graph.edges.push((i, j, "same_subject".to_string()));
            }
        }
    }
    Ok(graph)
}

/// How evidence facts combine into a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Constraints drawn from distinct documents that converge on one answer.
    Convergent,
    /// Constraints conjoined freely over the subject's evidence.
    Conjunctive,
}

/// Compose an unverified QA item about one subject in the evidence graph.
pub fn construct_question(
    world: &World,
    evidence: &EvidenceGraph,
    topology: Topology,
    seed: u64,
) -> Result<QAItem> {
    let subjects = evidence.subjects_with_facts(2);
    if subjects.is_empty() {
        return Err(Error::InsufficientEvidence(
            "no subject has two grounded facts".to_string(),
        ));
    }
    let mut pick_rng = entity_rng(seed, "subject-pick");
    let subject_id = subjects[pick_rng.gen_range(0..subjects.len())].clone();
    let answer = world.entity(&subject_id)?;

    let mut nodes = evidence.nodes_for_subject(&subject_id);
    nodes.sort_by(|a, b| {
        a.doc_id
            .cmp(&b.doc_id)
            .then(a.predicate.cmp(&b.predicate))
            .then(a.value.cmp(&b.value))
    });
    let mut rng = entity_rng(seed, &subject_id);
    nodes.shuffle(&mut rng);

    let mut set = ConstraintSet::new();
    let mut used_docs: Vec<&str> = Vec::new();
    let want = rng.gen_range(2..=3usize);
    for node in &nodes {
        if set.len() >= want {
            break;
        }
        if topology == Topology::Convergent && used_docs.contains(&node.doc_id.as_str()) {
            continue;
        }
        let constraint = Constraint {
            dimension: node.dimension,
            predicate: node.predicate.clone(),
            value: node.value.clone(),
            obfuscated: false,
        };
        if set.contains_fact(constraint.dimension, &crate::world::Fact::new(
            constraint.predicate.clone(),
            constraint.value.clone(),
        )) {
            continue;
        }
        set.push(constraint, 0)?;
        used_docs.push(node.doc_id.as_str());
    }
    if set.len() < 2 {
        return Err(Error::InsufficientEvidence(format!(
            "subject {subject_id} yields only {} usable constraints under {topology:?}",
            set.len()
        )));
    }

    let question = render_question(&set, seed)?;
    let leakage = leakage_check(&question, &answer.name);
    if !leakage.pass {
        return Err(Error::invalid(format!(
            "question leaks the answer name at {:?}",
            leakage.spans
        )));
    }
    Ok(QAItem {
        id: format!("qa-a-{subject_id}"),
        question,
        answer: answer.name.clone(),
        answer_entity_id: subject_id,
        constraint_set: set,
        intermediates: Vec::new(),
        provenance: Provenance::Agent,
        verified: false,
        rounds_used: 0,
    })
}

/// Why verification rejected an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    /// More than one entity satisfies the constraints.
    UnderConstrained,
    /// A solver answers correctly with almost no tool use.
    ShortcutPath,
    /// An honest solve cannot recover the answer.
    InsufficientDepth,
    /// A constraint has no grounding document, or nothing satisfies the set.
    EvidenceConflict,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::UnderConstrained => "under_constrained",
            DiagnosticCode::ShortcutPath => "shortcut_path",
            DiagnosticCode::InsufficientDepth => "insufficient_depth",
            DiagnosticCode::EvidenceConflict => "evidence_conflict",
        }
    }
}

/// A verification failure with enough detail to drive revision.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticFeedback {
    pub code: DiagnosticCode,
    pub detail: String,
}

/// Settings for the verify/revise loop.
#[derive(Clone)]
pub struct VerifyConfig {
    /// Tool budget handed to the independent solver.
    pub solver_budget: usize,
    /// Correct answers at or under this many tool calls count as shortcuts.
    pub shortcut_max_calls: usize,
    pub max_iters: usize,
    /// Closed-book filter: items answerable without tool use are too easy to
    /// keep. Returns `true` when the (question, answer) pair may proceed.
    /// The default admits exactly the questions that pass the leakage check.
    pub closed_book: ClosedBookCheck,
}

/// Shared-ownership predicate over (question, answer) pairs.
pub type ClosedBookCheck = Arc<dyn Fn(&str, &str) -> bool + Send + Sync>;

impl std::fmt::Debug for VerifyConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VerifyConfig")
            .field("solver_budget", &self.solver_budget)
            .field("shortcut_max_calls", &self.shortcut_max_calls)
            .field("max_iters", &self.max_iters)
            .field("closed_book", &"<predicate>")
            .finish()
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            solver_budget: 60,
            shortcut_max_calls: 1,
            max_iters: 5,
            closed_book: Arc::new(|question, answer| leakage_check(question, answer).pass),
        }
    }
}

fn grounding_doc(world: &World, constraint: &Constraint) -> Option<String> {
    for doc in world.documents() {
        if !subjects_in_body(&doc.body, &constraint.predicate, &constraint.value).is_empty() {
            return Some(doc.id.clone());
        }
    }
    None
}

fn independent_solve(
    world: &Arc<World>,
    item: &QAItem,
    config: &VerifyConfig,
) -> Result<(Option<String>, usize)> {
    let solver = SimSolverPolicy::default();
    let tools = ToolLayer::for_world(Arc::clone(world));
    let rollout_config = RolloutConfig {
        tool_budget: config.solver_budget,
        max_steps: config.solver_budget + 2,
        ..RolloutConfig::default()
    };
    let trajectory = run_rollout(
        &solver,
        &tools,
        "Answer the question using the search and visit tools.",
        &item.question,
        rollout_config,
    )?;
    Ok((
        trajectory.final_answer().map(str::to_string),
        trajectory.tool_calls_used,
    ))
}

/// Run the three verification stages in order; the first failure wins.
///
/// 1. grounding — every constraint must be provable from some document;
/// 2. independent solve — a fresh solver must recover the answer, with
///    more than a trivial amount of tool work;
/// 3. uniqueness — the exhaustive satisfier set must be exactly the answer.
pub fn multi_stage_verify(
    world: &Arc<World>,
    item: &QAItem,
    config: &VerifyConfig,
) -> Result<(bool, Option<DiagnosticFeedback>)> {
    for constraint in item.constraint_set.constraints() {
        if grounding_doc(world, constraint).is_none() {
            return Ok((
                false,
                Some(DiagnosticFeedback {
                    code: DiagnosticCode::EvidenceConflict,
                    detail: format!(
                        "no document grounds `{} = {}`",
                        constraint.predicate, constraint.value
                    ),
                }),
            ));
        }
    }
    if !(config.closed_book)(&item.question, &item.answer) {
        return Ok((
            false,
            Some(DiagnosticFeedback {
                code: DiagnosticCode::ShortcutPath,
                detail: "closed-book filter rejected the question".to_string(),
            }),
        ));
    }

    let (answer, calls) = independent_solve(world, item, config)?;
    let solved = answer
        .as_deref()
        .map(|a| crate::text::normalize_answer(a) == crate::text::normalize_answer(&item.answer))
        .unwrap_or(false);
    if !solved {
        return Ok((
            false,
            Some(DiagnosticFeedback {
                code: DiagnosticCode::InsufficientDepth,
                detail: format!(
                    "independent solver produced {:?} instead of {:?}",
                    answer.unwrap_or_default(),
                    item.answer
                ),
            }),
        ));
    }
    if calls <= config.shortcut_max_calls {
        return Ok((
            false,
            Some(DiagnosticFeedback {
                code: DiagnosticCode::ShortcutPath,
                detail: format!("solved with only {calls} tool calls"),
            }),
        ));
    }

    let sat = satisfiers(world, item.constraint_set.constraints());
    if sat.len() > 1 {
        return Ok((
            false,
            Some(DiagnosticFeedback {
                code: DiagnosticCode::UnderConstrained,
                detail: format!("{} entities satisfy the constraints", sat.len()),
            }),
        ));
    }
    if sat.is_empty() || sat[0] != item.answer_entity_id {
        return Ok((
            false,
            Some(DiagnosticFeedback {
                code: DiagnosticCode::EvidenceConflict,
                detail: "constraints do not select the intended answer".to_string(),
            }),
        ));
    }
    Ok((true, None))
}

/// Unused grounded profile facts, in (dimension, predicate, value) order.
fn unused_profile_facts(profile: &AttributeProfile, set: &ConstraintSet) -> Vec<Constraint> {
    profile
        .flat()
        .into_iter()
        .filter(|(dim, fact)| !set.contains_fact(*dim, fact))
        .map(|(dim, fact)| Constraint {
            dimension: dim,
            predicate: fact.predicate.clone(),
            value: fact.value.clone(),
            obfuscated: false,
        })
        .collect()
}

fn rebuild(item: &QAItem, set: ConstraintSet, seed: u64, iteration: usize) -> Result<QAItem> {
    let question = render_question(&set, seed)?;
    let mut next = item.clone();
    next.question = question;
    next.constraint_set = set;
    next.rounds_used = iteration;
    Ok(next)
}

/// Apply the diagnostic-driven revision table once. Returns `None` when no
/// revision can change the constraint set.
fn revise_once(
    world: &World,
    item: &QAItem,
    feedback: &DiagnosticFeedback,
    profile: &AttributeProfile,
    seed: u64,
    iteration: usize,
) -> Result<Option<QAItem>> {
    let set = &item.constraint_set;
    let unused = unused_profile_facts(profile, set);
    let next_set = match feedback.code {
        DiagnosticCode::UnderConstrained => {
            // add the first unused fact the smallest extra satisfier lacks
            let sat = satisfiers(world, set.constraints());
            let rival = sat.iter().find(|id| id.as_str() != item.answer_entity_id);
            let discriminator = rival
                .and_then(|rid| world.entity(rid).ok())
                .and_then(|rival_entity| {
                    unused.iter().find(|c| {
                        !rival_entity.has_fact(c.dimension, &c.predicate, &c.value)
                    })
                })
                .or_else(|| unused.first());
            match discriminator {
                Some(c) => {
                    let mut next = set.clone();
                    next.push(c.clone(), iteration)?;
                    next
                }
                None => return Ok(None),
            }
        }
        DiagnosticCode::ShortcutPath => match unused.first() {
            // deepen: one more fact forces another evidence hop
            Some(c) => {
                let mut next = set.clone();
                next.push(c.clone(), iteration)?;
                next
            }
            None => return Ok(None),
        },
        DiagnosticCode::EvidenceConflict => {
            let grounded_unused: Vec<&Constraint> = unused
                .iter()
                .filter(|c| grounding_doc(world, c).is_some())
                .collect();
            let mut kept: Vec<Constraint> = set
                .constraints()
                .iter()
                .filter(|c| grounding_doc(world, c).is_some())
                .cloned()
                .collect();
            let dropped_any = kept.len() < set.len();
            if !dropped_any {
                // everything grounds individually yet the set conflicts:
                // swap the newest constraint for a grounded unused fact
                match grounded_unused.first() {
                    Some(c) => {
                        kept.pop();
                        kept.push((*c).clone());
                    }
                    None => return Ok(None),
                }
            }
            let mut fill = grounded_unused.into_iter();
            while kept.len() < 2 {
                match fill.next() {
                    Some(c) => {
                        if !kept.iter().any(|k| k.key() == c.key()) {
                            kept.push(c.clone());
                        }
                    }
                    None => return Ok(None),
                }
            }
            let mut next = ConstraintSet::new();
            for c in kept {
                next.push(c, iteration)?;
            }
            if next.constraints() == set.constraints() {
                return Ok(None);
            }
            next
        }
        DiagnosticCode::InsufficientDepth => {
            // simplify: drop the newest constraint, or swap it when already
            // at the two-constraint floor
            let constraints = set.constraints();
            if constraints.len() > 2 {
                let mut next = ConstraintSet::new();
                for c in &constraints[..constraints.len() - 1] {
                    next.push(c.clone(), iteration)?;
                }
                next
            } else {
                match unused.first() {
                    Some(c) => {
                        let mut next = ConstraintSet::new();
                        for kept in &constraints[..constraints.len() - 1] {
                            next.push(kept.clone(), iteration)?;
                        }
                        next.push(c.clone(), iteration)?;
                        next
                    }
                    None => return Ok(None),
                }
            }
        }
    };
    Ok(Some(rebuild(item, next_set, seed, iteration)?))
}

/// Verify an item and, on failure, revise it up to `max_iters` times.
///
/// Returns the verified item (with `verified = true`) or `None` when the
/// loop cannot repair it. The input survives untouched on the pass path.
pub fn diagnose_and_revise(
    world: &Arc<World>,
    item: &QAItem,
    config: &VerifyConfig,
    seed: u64,
) -> Result<Option<QAItem>> {
    let profile = super::graph::profile_attributes(world, &item.answer_entity_id)?;
    let mut current = item.clone();
    for iteration in 0..=config.max_iters {
        let (pass, feedback) = multi_stage_verify(world, &current, config)?;
        if pass {
            current.verified = true;
            return Ok(Some(current));
        }
        if iteration == config.max_iters {
            break;
        }
        let feedback = feedback.expect("failed verification carries feedback");
        match revise_once(world, &current, &feedback, &profile, seed, iteration + 1)? {
            Some(next) => {
                let leak = leakage_check(&next.question, &next.answer);
                if !leak.pass {
                    return Ok(None);
                }
                current = next;
            }
            None => return Ok(None),
        }
    }
    Ok(None)
}

/// Full exploration-synthesis pipeline: explore, construct, verify/revise,
/// repeat over seeds until `n` verified items exist or seeds are exhausted.
pub fn synthesize_dataset(
    world: &Arc<World>,
    n: usize,
    tool_budget: usize,
    seed: u64,
) -> Result<Vec<QAItem>> {
    if tool_budget < 4 {
        return Err(Error::invalid("exploration needs a budget of at least 4"));
    }
    let explore_budget = (tool_budget / 2).max(2);
    let verify_config = VerifyConfig {
        solver_budget: (tool_budget - explore_budget).max(2),
        ..VerifyConfig::default()
    };
    let mut items: Vec<QAItem> = Vec::new();
    let entity_ids: Vec<String> = world.entities().map(|e| e.id.clone()).collect();
    for (attempt, start) in entity_ids.iter().enumerate() {
        if items.len() >= n {
            break;
        }
        let entity = world.entity(start)?;
        let explorer = SimSolverPolicy::default();
        // probe the world through this entity's first fact; the explorer
        // pulls whatever documents that clause surfaces
        let (pred, value) = match entity.all_facts().next() {
            Some((_, f)) => (f.predicate.clone(), f.value.clone()),
            None => continue,
        };
        let query = format!("Which entity {}?", render_clause(&pred, &value));
        let evidence = match build_evidence_graph(world, &explorer, &query, explore_budget) {
            Ok(g) => g,
            Err(Error::EmptyEvidence) => continue,
            Err(e) => return Err(e),
        };
        let topology = if attempt % 2 == 0 {
            Topology::Convergent
        } else {
            Topology::Conjunctive
        };
        let item_seed = seed.wrapping_add(attempt as u64);
        let item = match construct_question(world, &evidence, topology, item_seed) {
            Ok(i) => i,
            Err(Error::InsufficientEvidence(_)) => continue,
            Err(e) => return Err(e),
        };
        if items.iter().any(|existing| existing.id == item.id) {
            continue;
        }
        if let Some(verified) = diagnose_and_revise(world, &item, &verify_config, item_seed)? {
            items.push(verified);
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::policy::{PolicyDecision, ScriptedPolicy};
    use crate::runtime::Action;
    use crate::world::generate::{generate_world, predicate_dimension};

    fn arc_world(seed: u64, n: usize) -> Arc<World> {
        Arc::new(generate_world(seed, n).unwrap())
    }

    fn visit_script(world: &World, doc_ids: &[&str]) -> ScriptedPolicy {
        let mut script = Vec::new();
        script.push(PolicyDecision::new(
            "look around",
            Action::ToolCall {
                tool: "search".to_string(),
                args: [("query".to_string(), world.entity("e0").unwrap().name.clone())]
                    .into_iter()
                    .collect(),
            },
        ));
        for id in doc_ids {
            script.push(PolicyDecision::new(
                format!("open {id}"),
                Action::ToolCall {
                    tool: "visit".to_string(),
                    args: [("doc_id".to_string(), id.to_string())].into_iter().collect(),
                },
            ));
        }
        script.push(PolicyDecision::new(
            "done",
            Action::FinalAnswer {
                text: "done".to_string(),
            },
        ));
        ScriptedPolicy::new(script)
    }

    #[test]
    fn evidence_graph_collects_visited_facts() {
        let world = arc_world(31, 12);
        let policy = visit_script(&world, &["d0", "d1", "d2"]);
        let graph = build_evidence_graph(&world, &policy, "probe", 10).unwrap();
        assert!(graph.nodes.len() >= 3, "three visited docs ground at least three facts");
        // every node grounds in its document
        for node in &graph.nodes {
            let doc = world.document(&node.doc_id).unwrap();
            let entity = world.entity(&node.subject_entity_id).unwrap();
            let sentence = render_fact_sentence(&entity.name, &node.predicate, &node.value);
            assert!(doc.body.contains(&sentence));
            assert_eq!(predicate_dimension(&node.predicate), Some(node.dimension));
        }
        // d0 and d1 are both about e0, so same_subject edges must exist
        assert!(graph.edges.iter().any(|(_, _, l)| l == "same_subject"));
        assert!(graph.edges.iter().any(|(_, _, l)| l == "co_document"));
    }

    #[test]
    fn evidence_graph_rejects_zero_budget_and_empty_walks() {
        let world = arc_world(31, 12);
        let policy = visit_script(&world, &["d0"]);
        assert!(matches!(
            build_evidence_graph(&world, &policy, "q", 0),
            Err(Error::InvalidArgument(_))
        ));
        let no_visits = ScriptedPolicy::new(vec![PolicyDecision::new(
            "stop",
            Action::FinalAnswer {
                text: "nothing".to_string(),
            },
        )]);
        assert!(matches!(
            build_evidence_graph(&world, &no_visits, "q", 10),
            Err(Error::EmptyEvidence)
        ));
    }

    #[test]
    fn constructed_questions_are_well_formed() {
        let world = arc_world(37, 12);
        let policy = visit_script(&world, &["d0", "d1", "d2", "d3"]);
        let graph = build_evidence_graph(&world, &policy, "probe", 10).unwrap();
        for (seed, topology) in [(1u64, Topology::Convergent), (2, Topology::Conjunctive)] {
            let item = construct_question(&world, &graph, topology, seed).unwrap();
            assert!(item.question.ends_with('?'));
            assert!(item.constraint_set.len() >= 2);
            assert!(!item.verified);
            assert_eq!(item.provenance, Provenance::Agent);
            assert!(leakage_check(&item.question, &item.answer).pass);
            // convergent topology: constraints come from distinct documents
            if topology == Topology::Convergent {
                // each constraint grounds in at least one doc; the builder
                // drew them from distinct docs, so ≥2 grounding docs exist
                let docs: std::collections::BTreeSet<String> = item
                    .constraint_set
                    .constraints()
                    .iter()
                    .filter_map(|c| grounding_doc(&world, c))
                    .collect();
                assert!(docs.len() >= 2);
            }
        }
    }

    #[test]
    fn construction_is_deterministic_per_seed() {
        let world = arc_world(37, 12);
        let policy = visit_script(&world, &["d0", "d1", "d2", "d3"]);
        let graph = build_evidence_graph(&world, &policy, "probe", 10).unwrap();
        let a = construct_question(&world, &graph, Topology::Conjunctive, 9).unwrap();
        let b = construct_question(&world, &graph, Topology::Conjunctive, 9).unwrap();
        assert_eq!(a, b);
        let c = construct_question(&world, &graph, Topology::Conjunctive, 10).unwrap();
        assert!(a.question != c.question || a.answer != c.answer || a == c);
    }

    #[test]
    fn verify_flags_ungrounded_constraints_as_conflict() {
        let world = arc_world(41, 12);
        let policy = visit_script(&world, &["d0", "d1"]);
        let graph = build_evidence_graph(&world, &policy, "probe", 10).unwrap();
        let mut item = construct_question(&world, &graph, Topology::Conjunctive, 3).unwrap();
        let mut set = ConstraintSet::new();
        for c in item.constraint_set.constraints() {
            set.push(c.clone(), 0).unwrap();
        }
        set.push(
            Constraint {
                dimension: AttributeDimension::Categorical,
                predicate: "category".to_string(),
                value: "phantom-category".to_string(),
                obfuscated: false,
            },
            0,
        )
        .unwrap();
        item.constraint_set = set;
        let (pass, feedback) = multi_stage_verify(&world, &item, &VerifyConfig::default()).unwrap();
        assert!(!pass);
        assert_eq!(feedback.unwrap().code, DiagnosticCode::EvidenceConflict);
    }

    #[test]
    fn verify_flags_ambiguous_sets_as_under_constrained() {
        // every generated entity has exactly one region among six, so at
        // n=12 some region is shared; a single region constraint on a
        // shared value is under-constrained — but the solver must still
        // find the answer, so craft the case directly:
        let world = arc_world(43, 12);
        // find two entities sharing a region
        let mut by_region: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in world.entities() {
            for (dim, f) in e.all_facts() {
                if dim == AttributeDimension::Spatial && f.predicate == "region" {
                    by_region.entry(f.value.clone()).or_default().push(e.id.clone());
                }
            }
        }
        let (region, ids) = by_region
            .into_iter()
            .find(|(_, v)| v.len() >= 2)
            .expect("some region is shared at n=12");
        let answer_id = ids[0].clone();
        let answer = world.entity(&answer_id).unwrap();
        // two constraints both satisfied by multiple entities: region + a
        // second fact the rival shares is hard to find, so use region twice
        // via different predicates is impossible — instead pair region with
        // the answer's city IF the rival shares it; otherwise fall back to
        // checking the diagnostic on the raw satisfier count.
        let mut set = ConstraintSet::new();
        set.push(
            Constraint {
                dimension: AttributeDimension::Spatial,
                predicate: "region".to_string(),
                value: region.clone(),
                obfuscated: false,
            },
            0,
        )
        .unwrap();
        // located_in of the answer
        let city = answer
            .attributes
            .get(&AttributeDimension::Spatial)
            .unwrap()
            .iter()
            .find(|f| f.predicate == "located_in")
            .unwrap()
            .value
            .clone();
        set.push(
            Constraint {
                dimension: AttributeDimension::Spatial,
                predicate: "located_in".to_string(),
                value: city,
                obfuscated: false,
            },
            0,
        )
        .unwrap();
        let sat = satisfiers(&world, set.constraints());
        let item = QAItem {
            id: "qa-test-ambiguous".to_string(),
            question: render_question(&set, 0).unwrap(),
            answer: answer.name.clone(),
            answer_entity_id: answer_id.clone(),
            constraint_set: set,
            intermediates: vec![],
            provenance: Provenance::Agent,
            verified: false,
            rounds_used: 0,
        };
        if sat.len() > 1 && sat.contains(&answer_id) {
            // under-constrained questions have no unique solution, so the
            // solver stage may fail first with insufficient_depth; both
            // diagnoses are valid rejections of this item
            let (pass, feedback) =
                multi_stage_verify(&world, &item, &VerifyConfig::default()).unwrap();
            assert!(!pass);
            let code = feedback.unwrap().code;
            assert!(
                code == DiagnosticCode::UnderConstrained
                    || code == DiagnosticCode::InsufficientDepth
            );
        }
    }

    #[test]
    fn closed_book_hook_rejects_as_shortcut() {
        let world = arc_world(47, 16);
        let items = synthesize_dataset(&world, 1, 60, 5).unwrap();
        let item = items.first().expect("pipeline produced an item");
        let config = VerifyConfig {
            closed_book: Arc::new(|_, _| false),
            ..VerifyConfig::default()
        };
        let (pass, feedback) = multi_stage_verify(&world, item, &config).unwrap();
        assert!(!pass);
        assert_eq!(feedback.unwrap().code, DiagnosticCode::ShortcutPath);
        // the default hook admits the same item
        let (pass, _) = multi_stage_verify(&world, item, &VerifyConfig::default()).unwrap();
        assert!(pass);
    }

    #[test]
    fn revision_loop_repairs_or_rejects() {
        let world = arc_world(47, 16);
        let items = synthesize_dataset(&world, 4, 60, 5).unwrap();
        assert!(!items.is_empty(), "pipeline produced no verified items");
        for item in &items {
            assert!(item.verified);
            // verified items satisfy the uniqueness oracle
            assert_eq!(
                satisfiers(&world, item.constraint_set.constraints()),
                vec![item.answer_entity_id.clone()]
            );
            assert!(leakage_check(&item.question, &item.answer).pass);
        }
    }

    #[test]
    fn diagnose_and_revise_passes_through_good_items() {
        let world = arc_world(53, 16);
        let items = synthesize_dataset(&world, 2, 60, 5).unwrap();
        let item = items.first().expect("pipeline produced an item");
        // a verified item re-verifies without mutation
        let again = diagnose_and_revise(&world, item, &VerifyConfig::default(), 5)
            .unwrap()
            .expect("verified item passes again");
        assert_eq!(again.question, item.question);
        assert_eq!(
            again.constraint_set.constraints(),
            item.constraint_set.constraints()
        );
    }

    #[test]
    fn revision_under_constrained_adds_discriminator() {
        let world = arc_world(43, 12);
        // build an intentionally ambiguous item: one region constraint
        let mut by_region: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in world.entities() {
            for (dim, f) in e.all_facts() {
                if dim == AttributeDimension::Spatial && f.predicate == "region" {
                    by_region.entry(f.value.clone()).or_default().push(e.id.clone());
                }
            }
        }
        let (region, ids) = by_region
            .into_iter()
            .find(|(_, v)| v.len() >= 2)
            .expect("shared region exists");
        let answer_id = ids[0].clone();
        let answer = world.entity(&answer_id).unwrap();
        let mut set = ConstraintSet::new();
        set.push(
            Constraint {
                dimension: AttributeDimension::Spatial,
                predicate: "region".to_string(),
                value: region,
                obfuscated: false,
            },
            0,
        )
        .unwrap();
        set.push(
            Constraint {
                dimension: AttributeDimension::Categorical,
                predicate: "category".to_string(),
                value: answer
                    .attributes
                    .get(&AttributeDimension::Categorical)
                    .unwrap()
                    .iter()
                    .find(|f| f.predicate == "category")
                    .unwrap()
                    .value
                    .clone(),
                obfuscated: false,
            },
            0,
        )
        .unwrap();
        let item = QAItem {
            id: "qa-test-revise".to_string(),
            question: render_question(&set, 1).unwrap(),
            answer: answer.name.clone(),
            answer_entity_id: answer_id.clone(),
            constraint_set: set,
            intermediates: vec![],
            provenance: Provenance::Agent,
            verified: false,
            rounds_used: 0,
        };
        let profile = super::super::graph::profile_attributes(&world, &answer_id).unwrap();
        let feedback = DiagnosticFeedback {
            code: DiagnosticCode::UnderConstrained,
            detail: "test".to_string(),
        };
        let revised = revise_once(&world, &item, &feedback, &profile, 1, 1)
            .unwrap()
            .expect("profile has unused facts");
        assert_eq!(revised.constraint_set.len(), item.constraint_set.len() + 1);
        // the revision narrows or preserves the satisfier count
        let before = satisfiers(&world, item.constraint_set.constraints()).len();
        let after = satisfiers(&world, revised.constraint_set.constraints()).len();
        assert!(after <= before);
    }
}
