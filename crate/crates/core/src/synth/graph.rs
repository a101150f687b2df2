//! Answer-first QA synthesis over the knowledge graph.
//!
//! Items are built backwards from a sampled answer entity: profile its
//! attributes, collect intermediate evidence entities, then run the
//! adversarial uniqueness loop — a Generator seeds obfuscated constraints,
//! an Attacker hunts for counterexample entities by exhaustive enumeration,
//! and an Analyzer appends discriminating constraints until the answer is
//! the unique satisfier (or the round budget ends).

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    entity_rng, leakage_check, render_question, satisfiers, AttributeProfile, Constraint,
    ConstraintSet, Provenance, QAItem,
};
use crate::error::{Error, Result};
use crate::world::{AttributeDimension, World};

/// Answer-entity sampling filters: connectivity band plus a minimum document
/// footprint.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EntityFilters {
    pub degree_min: usize,
    pub degree_max: usize,
    pub min_docs: usize,
}

impl Default for EntityFilters {
    fn default() -> Self {
        Self {
            degree_min: 2,
            degree_max: 5,
            min_docs: 1,
        }
    }
}

/// Entities passing the filters, in ascending id order, truncated to `n`.
pub fn sample_answer_entities(world: &World, filters: &EntityFilters, n: usize) -> Vec<String> {
    world
        .entities()
        .filter(|e| {
            let degree = e.neighbor_ids.len();
            degree >= filters.degree_min
                && degree <= filters.degree_max
                && e.document_ids.len() >= filters.min_docs
        })
        .take(n)
        .map(|e| e.id.clone())
        .collect()
}

/// Group an entity's stored facts by dimension; all five dimensions appear.
pub fn profile_attributes(world: &World, entity_id: &str) -> Result<AttributeProfile> {
    let entity = world.entity(entity_id)?;
    let mut facts = std::collections::BTreeMap::new();
    for dim in AttributeDimension::ALL {
        facts.insert(dim, entity.attributes.get(&dim).cloned().unwrap_or_default());
    }
    Ok(AttributeProfile {
        entity_id: entity_id.to_string(),
        facts,
    })
}

/// Collect 4–8 intermediate evidence entities reachable from the answer by
/// graph adjacency or attribute-keyword search. Selection greedily maximizes
/// newly covered dimensions, breaking ties by ascending id.
pub fn reverse_path_search(
    world: &World,
    answer_entity_id: &str,
    want: (usize, usize),
) -> Result<Vec<String>> {
    let (min_want, max_want) = want;
    let answer = world.entity(answer_entity_id)?;

    // Candidate pool: entity id → dimensions through which it was reached.
    let mut coverage: std::collections::BTreeMap<String, std::collections::BTreeSet<AttributeDimension>> =
        std::collections::BTreeMap::new();
    for nid in &answer.neighbor_ids {
        coverage
            .entry(nid.clone())
            .or_default()
            .insert(AttributeDimension::EntityRelation);
    }
    for (dim, fact) in answer.all_facts() {
        for hit in world.search(&fact.value, 5) {
            let doc = world.document(&hit.doc_id)?;
            for eid in &doc.entity_ids {
                if eid != answer_entity_id {
                    coverage.entry(eid.clone()).or_default().insert(dim);
                }
            }
        }
    }
    if coverage.len() < min_want {
        return Err(Error::InsufficientEvidence(format!(
            "{answer_entity_id} has only {} reachable evidence entities (need {min_want})",
            coverage.len()
        )));
    }

    let mut picked: Vec<String> = Vec::new();
    let mut covered: std::collections::BTreeSet<AttributeDimension> = Default::default();
    let mut remaining: Vec<(String, std::collections::BTreeSet<AttributeDimension>)> =
        coverage.into_iter().collect();
    while picked.len() < max_want && !remaining.is_empty() {
        if covered.len() == AttributeDimension::ALL.len() && picked.len() >= min_want {
            break;
        }
        // remaining is id-ordered, so the first maximal-gain entry wins ties
        let best_gain = remaining
            .iter()
            .map(|(_, dims)| dims.difference(&covered).count())
            .max()
            .expect("non-empty");
        let chosen_ix = remaining
            .iter()
            .position(|(_, dims)| dims.difference(&covered).count() == best_gain)
            .expect("at least the max element matches");
        let (id, dims) = remaining.remove(chosen_ix);
        covered.extend(dims);
        picked.push(id);
    }
    Ok(picked)
}

/// Adversarial loop settings.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdversarialConfig {
    pub min_constraints: usize,
    pub max_rounds: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            min_constraints: 3,
            max_rounds: 10,
        }
    }
}

/// Outcome of the adversarial uniqueness loop.
#[derive(Debug, Clone)]
pub struct AdversarialOutcome {
    pub set: ConstraintSet,
    pub converged: bool,
    pub rounds_used: usize,
    /// Satisfier count after each completed round, for shrinkage analysis.
    pub satisfier_trace: Vec<usize>,
}

fn profile_constraint(dim: AttributeDimension, fact: &crate::world::Fact, obfuscated: bool) -> Constraint {
    Constraint {
        dimension: dim,
        predicate: fact.predicate.clone(),
        value: fact.value.clone(),
        obfuscated,
    }
}

/// Pick the best discriminating profile fact: one the answer holds, absent
/// from the set, and (when a counterexample is given) failed by it. Prefers
/// dimensions the set does not use yet, then (dimension, predicate, value)
/// order.
fn pick_addition(
    world: &World,
    profile: &AttributeProfile,
    set: &ConstraintSet,
    counterexample: Option<&str>,
) -> Option<Constraint> {
    let used = set.used_dimensions();
    let cx_entity = counterexample.and_then(|id| world.entity(id).ok());
    let mut candidates: Vec<(bool, AttributeDimension, &crate::world::Fact)> = Vec::new();
    for (dim, fact) in profile.flat() {
        if set.contains_fact(dim, fact) {
            continue;
        }
        if let Some(cx) = cx_entity {
            if cx.has_fact(dim, &fact.predicate, &fact.value) {
                continue; // not discriminating
            }
        }
        candidates.push((!used.contains(&dim), dim, fact));
    }
    // unused-dimension candidates first, then lexicographic
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.predicate.cmp(&b.2.predicate))
            .then(a.2.value.cmp(&b.2.value))
    });
    candidates
        .first()
        .map(|(_, dim, fact)| profile_constraint(*dim, fact, false))
}

/// Run the Generator → Attacker → Analyzer loop for one answer entity.
///
/// Convergence requires an empty counterexample set AND at least
/// `min_constraints` constraints. When no discriminating fact exists (true
/// duplicate entities) the loop pads with redundant profile facts and runs
/// the full round budget before reporting non-convergence.
pub fn adversarial_verify(
    world: &World,
    answer_entity_id: &str,
    profile: &AttributeProfile,
    config: &AdversarialConfig,
    seed: u64,
) -> Result<AdversarialOutcome> {
    if config.min_constraints < 2 {
        return Err(Error::invalid("min_constraints must be >= 2"));
    }
    if profile.entity_id != answer_entity_id {
        return Err(Error::invalid("profile does not belong to the answer entity"));
    }
    world.entity(answer_entity_id)?;

    // Generator: 2–3 seeded obfuscated constraints from the profile.
    let mut rng = entity_rng(seed, answer_entity_id);
    let mut flat = profile.flat();
    if flat.is_empty() {
        return Err(Error::InsufficientEvidence(format!(
            "{answer_entity_id} has no profile facts to constrain"
        )));
    }
    flat.shuffle(&mut rng);
    let n_seeds = rng.gen_range(2..=3usize).min(flat.len());
    let mut set = ConstraintSet::new();
    for (dim, fact) in flat.iter().take(n_seeds) {
        set.push(profile_constraint(*dim, fact, true), 0)?;
    }

    let mut satisfier_trace = Vec::new();
    for round in 1..=config.max_rounds {
        let sat = satisfiers(world, set.constraints());
        satisfier_trace.push(sat.len());
        debug_assert!(
            sat.iter().any(|s| s == answer_entity_id),
            "the answer must satisfy its own constraints"
        );
        let counterexample = sat.iter().find(|id| id.as_str() != answer_entity_id);
        match counterexample {
            None if set.len() >= config.min_constraints => {
                return Ok(AdversarialOutcome {
                    set,
                    converged: true,
                    rounds_used: round,
                    satisfier_trace,
                });
            }
            None => {
                // unique but under the floor: pad with any unused profile fact
                match pick_addition(world, profile, &set, None) {
                    Some(c) => set.push(c, round)?,
                    None => {
                        return Ok(AdversarialOutcome {
                            set,
                            converged: false,
                            rounds_used: round,
                            satisfier_trace,
                        })
                    }
                }
            }
            Some(cx) => {
                let cx = cx.clone();
                // Analyzer: discriminating fact first, redundant pad second
                // (the pad keeps monotone growth when twins block progress).
                let addition = pick_addition(world, profile, &set, Some(&cx))
                    .or_else(|| pick_addition(world, profile, &set, None));
                match addition {
                    Some(c) => set.push(c, round)?,
                    None => {
                        return Ok(AdversarialOutcome {
                            set,
                            converged: false,
                            rounds_used: round,
                            satisfier_trace,
                        })
                    }
                }
            }
        }
    }
    Ok(AdversarialOutcome {
        set,
        converged: false,
        rounds_used: config.max_rounds,
        satisfier_trace,
    })
}

/// Build one graph-provenance QA item for an answer entity.
pub fn synthesize_item(
    world: &World,
    answer_entity_id: &str,
    config: &AdversarialConfig,
    seed: u64,
) -> Result<QAItem> {
    let answer = world.entity(answer_entity_id)?;
    let profile = profile_attributes(world, answer_entity_id)?;
    let intermediates = reverse_path_search(world, answer_entity_id, (4, 8))?;
    let outcome = adversarial_verify(world, answer_entity_id, &profile, config, seed)?;
    let question = render_question(&outcome.set, seed)?;
    let leakage = leakage_check(&question, &answer.name);
    if !leakage.pass {
        return Err(Error::invalid(format!(
            "question leaks the answer name at {:?}",
            leakage.spans
        )));
    }
    Ok(QAItem {
        id: format!("qa-g-{answer_entity_id}"),
        question,
        answer: answer.name.clone(),
        answer_entity_id: answer_entity_id.to_string(),
        constraint_set: outcome.set,
        intermediates,
        provenance: Provenance::Graph,
        verified: outcome.converged,
        rounds_used: outcome.rounds_used,
    })
}

/// Synthesize up to `n` items over filter-passing answer entities. Entities
/// without enough reachable evidence are skipped.
pub fn synthesize_dataset(
    world: &World,
    filters: &EntityFilters,
    config: &AdversarialConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<QAItem>> {
    let mut items = Vec::new();
    for answer_id in sample_answer_entities(world, filters, usize::MAX) {
        if items.len() >= n {
            break;
        }
        match synthesize_item(world, &answer_id, config, seed) {
            Ok(item) => items.push(item),
            Err(Error::InsufficientEvidence(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(items)
}
