//! Seeded construction of simulated worlds.
//!
//! The generator is the only place randomness enters the world layer; it
//! draws every value from a ChaCha8 stream seeded by the caller, so a
//! `(seed, n_entities)` pair fully determines the output.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{id_order, AttributeDimension, Document, Entity, Fact, World};
use crate::error::{Error, Result};

const ADJECTIVES: [&str; 25] = [
    "Gilded", "Silent", "Amber", "Hollow", "Verdant", "Crimson", "Obsidian", "Luminous",
    "Weathered", "Azure", "Ivory", "Emerald", "Dusky", "Marble", "Copper", "Frosted",
    "Sable", "Radiant", "Mossy", "Cedar", "Slate", "Golden", "Quiet", "Stormy", "Winding",
];

const NOUNS: [&str; 25] = [
    "Archive", "Observatory", "Foundry", "Conservatory", "Depot", "Gallery", "Atelier",
    "Granary", "Lighthouse", "Pavilion", "Rotunda", "Seminary", "Terminal", "Viaduct",
    "Workshop", "Arboretum", "Basilica", "Citadel", "Dockyard", "Exchange", "Forum",
    "Hall", "Institute", "Junction", "Keep",
];

const CITIES: [&str; 8] = [
    "Avalon", "Brinmore", "Caldera", "Duskwall", "Eastmere", "Farrowgate", "Greyhaven",
    "Hollowbrook",
];

const REGIONS: [&str; 6] = [
    "Northreach", "Southmark", "Westvale", "Eastfold", "Midlands", "Coastlands",
];

const CATEGORIES: [&str; 8] = [
    "museum", "library", "theater", "laboratory", "market", "monastery", "mill", "arena",
];

const STYLES: [&str; 5] = ["baroque", "brutalist", "gothic", "modernist", "romanesque"];

const DECADES: [&str; 7] = [
    "1950s", "1960s", "1970s", "1980s", "1990s", "2000s", "2010s",
];

/// Predicate table: (predicate, connective phrase, value suffix) for every
/// fact kind the generator emits. Sentence shape is
/// `"{name} {phrase} {value}{suffix}."`.
const PREDICATE_PHRASES: [(&str, &str, &str); 10] = [
    ("located_in", "is located in", ""),
    ("region", "lies within the", " region"),
    ("established_year", "was established in", ""),
    ("renovated_decade", "was renovated during the", ""),
    ("height_meters", "stands at a height of", " meters"),
    ("annual_visitors_k", "welcomes about", " thousand visitors each year"),
    ("category", "is classified as a", ""),
    ("style", "is built in the", " style"),
    ("adjacent_to", "stands adjacent to", ""),
    ("partnered_with", "maintains a partnership with", ""),
];

/// Render the canonical sentence for a fact. Documents embed facts in exactly
/// this form, so substring checks against a rendered sentence decide whether
/// a document grounds a fact.
pub fn render_fact_sentence(entity_name: &str, predicate: &str, value: &str) -> String {
    for (pred, phrase, suffix) in PREDICATE_PHRASES {
        if pred == predicate {
            return format!("{entity_name} {phrase} {value}{suffix}.");
        }
    }
    format!("{entity_name} {predicate} {value}.")
}

/// Dimension a generator predicate belongs to.
pub fn predicate_dimension(predicate: &str) -> Option<AttributeDimension> {
    match predicate {
        "located_in" | "region" => Some(AttributeDimension::Spatial),
        "established_year" | "renovated_decade" => Some(AttributeDimension::Temporal),
        "height_meters" | "annual_visitors_k" => Some(AttributeDimension::Numerical),
        "category" | "style" => Some(AttributeDimension::Categorical),
        "adjacent_to" | "partnered_with" => Some(AttributeDimension::EntityRelation),
        _ => None,
    }
}

/// The connective phrase table, exposed so question parsers can invert
/// rendered sentences back into (predicate, value) pairs.
pub fn predicate_phrases() -> &'static [(&'static str, &'static str, &'static str)] {
    &PREDICATE_PHRASES
}

/// Question openers used by question renderers and stripped by parsers.
pub const INTRO_VARIANTS: [&str; 3] = [
    "Which entity",
    "Identify the entity that",
    "Find the entity which",
];

/// Render a constraint clause: the fact sentence minus the subject and the
/// final period, e.g. `"is located in Avalon"`.
pub fn render_clause(predicate: &str, value: &str) -> String {
    for (pred, phrase, suffix) in PREDICATE_PHRASES {
        if pred == predicate {
            return format!("{phrase} {value}{suffix}");
        }
    }
    format!("{predicate} {value}")
}

/// Invert [`render_clause`]: recover (predicate, value) from a clause. Picks
/// the longest matching phrase so overlapping prefixes resolve correctly.
pub fn parse_clause(clause: &str) -> Option<(String, String)> {
    let clause = clause.trim();
    let mut best: Option<(&str, &str, &str)> = None;
    for entry @ (_, phrase, suffix) in &PREDICATE_PHRASES {
        if let Some(rest) = clause.strip_prefix(phrase) {
            if rest.starts_with(' ')
                && rest.ends_with(suffix)
                && best.map(|(_, p, _)| p.len() < phrase.len()).unwrap_or(true)
            {
                best = Some(*entry);
            }
        }
    }
    let (pred, phrase, suffix) = best?;
    let rest = clause[phrase.len()..].trim_start();
    let value = rest.strip_suffix(suffix.trim_start())?.trim();
    if value.is_empty() {
        return None;
    }
    Some((pred.to_string(), value.to_string()))
}

/// Find entity names carrying the clause's fact inside a document body: a
/// sentence `"{Name} {clause}."` yields `Name`. Names never span line
/// breaks, so only the text after the last newline in a sentence chunk is
/// considered — rendered pages may prepend heading lines to the body.
pub fn subjects_in_body(body: &str, predicate: &str, value: &str) -> Vec<String> {
    let needle = format!(" {}.", render_clause(predicate, value));
    let mut names = Vec::new();
    for sentence in body.split_inclusive('.') {
        let sentence = sentence.rsplit('\n').next().unwrap_or(sentence).trim_start();
        if let Some(name) = sentence.strip_suffix(&needle) {
            if !name.is_empty() && !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
    }
    names
}

/// Generate a world of `n_entities` entities from `seed`, with the default
/// two documents per entity.
///
/// Structure: a neighbor ring keeps the graph connected, extra seeded edges
/// raise degrees into the 2..=5 band, every entity gets two facts in each of
/// the five dimensions, and each entity's facts are split round-robin across
/// its documents.
pub fn generate_world(seed: u64, n_entities: usize) -> Result<World> {
    generate_world_with(seed, n_entities, 2)
}

/// [`generate_world`] with an explicit documents-per-entity count. Facts are
/// split round-robin over the documents, so every document carries at least
/// one fact; with ten facts per entity that bounds the count to 1..=10.
pub fn generate_world_with(seed: u64, n_entities: usize, docs_per_entity: usize) -> Result<World> {
    if n_entities < 3 {
        return Err(Error::invalid("a world needs at least 3 entities"));
    }
    if n_entities > ADJECTIVES.len() * NOUNS.len() {
        return Err(Error::invalid(format!(
            "at most {} entities supported",
            ADJECTIVES.len() * NOUNS.len()
        )));
    }
    if !(1..=10).contains(&docs_per_entity) {
        return Err(Error::invalid(
            "docs per entity must be between 1 and 10 so no document is empty",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Unique names: shuffle the adjective x noun index space.
    let mut name_indices: Vec<usize> = (0..ADJECTIVES.len() * NOUNS.len()).collect();
    name_indices.shuffle(&mut rng);
    let names: Vec<String> = name_indices[..n_entities]
        .iter()
        .map(|ix| format!("{} {}", ADJECTIVES[ix % ADJECTIVES.len()], NOUNS[ix / ADJECTIVES.len()]))
        .collect();

    // Neighbor ring plus seeded extra edges, degree capped at 5.
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_entities];
    for i in 0..n_entities {
        let j = (i + 1) % n_entities;
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    let extra_attempts = n_entities;
    for _ in 0..extra_attempts {
        let a = rng.gen_range(0..n_entities);
        let b = rng.gen_range(0..n_entities);
        if a == b || adjacency[a].contains(&b) {
            continue;
        }
        if adjacency[a].len() >= 5 || adjacency[b].len() >= 5 {
            continue;
        }
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for neighbors in &mut adjacency {
        neighbors.sort_unstable();
    }

    // Per-entity facts, two per dimension, drawn in a fixed order.
    let mut all_facts: Vec<Vec<(AttributeDimension, Fact)>> = Vec::with_capacity(n_entities);
    for i in 0..n_entities {
        let city = *CITIES.choose(&mut rng).expect("non-empty");
        let region = *REGIONS.choose(&mut rng).expect("non-empty");
        let year = rng.gen_range(1700..2020);
        let decade = *DECADES.choose(&mut rng).expect("non-empty");
        let height = rng.gen_range(10..200);
        let visitors = rng.gen_range(5..900);
        let category = *CATEGORIES.choose(&mut rng).expect("non-empty");
        let style = *STYLES.choose(&mut rng).expect("non-empty");
        let adjacent = names[adjacency[i][0]].clone();
        let partner = loop {
            let p = rng.gen_range(0..n_entities);
            if p != i {
                break names[p].clone();
            }
        };
        all_facts.push(vec![
            (AttributeDimension::Spatial, Fact::new("located_in", city)),
            (AttributeDimension::Spatial, Fact::new("region", region)),
            (AttributeDimension::Temporal, Fact::new("established_year", year.to_string())),
            (AttributeDimension::Temporal, Fact::new("renovated_decade", decade)),
            (AttributeDimension::Numerical, Fact::new("height_meters", height.to_string())),
            (AttributeDimension::Numerical, Fact::new("annual_visitors_k", visitors.to_string())),
            (AttributeDimension::Categorical, Fact::new("category", category)),
            (AttributeDimension::Categorical, Fact::new("style", style)),
            (AttributeDimension::EntityRelation, Fact::new("adjacent_to", adjacent)),
            (AttributeDimension::EntityRelation, Fact::new("partnered_with", partner)),
        ]);
    }

    // Documents: facts split round-robin over the entity's slots. A document
    // also mentions any entity named by a relation fact it carries.
    let name_to_id: BTreeMap<&str, String> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), format!("e{i}")))
        .collect();
    let mut documents = Vec::with_capacity(n_entities * docs_per_entity);
    for (i, facts) in all_facts.iter().enumerate() {
        for slot in 0..docs_per_entity {
            let title = match slot {
                0 => names[i].clone(),
                1 => format!("{} overview", names[i]),
                s => format!("{} notes {s}", names[i]),
            };
            let doc_id = format!("d{}", i * docs_per_entity + slot);
            let sentences: Vec<String> = facts
                .iter()
                .enumerate()
                .filter(|(k, _)| k % docs_per_entity == slot)
                .map(|(_, (_, f))| render_fact_sentence(&names[i], &f.predicate, &f.value))
                .collect();
            let mut entity_ids = vec![format!("e{i}")];
            for (k, (_, f)) in facts.iter().enumerate() {
                if k % docs_per_entity == slot
                    && matches!(f.predicate.as_str(), "adjacent_to" | "partnered_with")
                {
                    if let Some(id) = name_to_id.get(f.value.as_str()) {
                        if !entity_ids.contains(id) {
                            entity_ids.push(id.clone());
                        }
                    }
                }
            }
            entity_ids.sort_by(|a, b| id_order(a, b));
            documents.push(Document {
                id: doc_id,
                title,
                body: sentences.join(" "),
                entity_ids,
            });
        }
    }

    // Entity document lists derive from document mention lists.
    let mut doc_ids_for: Vec<Vec<String>> = vec![Vec::new(); n_entities];
    for doc in &documents {
        for eid in &doc.entity_ids {
            let ix: usize = eid[1..].parse().expect("generated id");
            doc_ids_for[ix].push(doc.id.clone());
        }
    }

    let entities: Vec<Entity> = (0..n_entities)
        .map(|i| {
            let mut attributes: BTreeMap<AttributeDimension, Vec<Fact>> = BTreeMap::new();
            for (dim, fact) in &all_facts[i] {
                attributes.entry(*dim).or_default().push(fact.clone());
            }
            let mut doc_ids = doc_ids_for[i].clone();
            doc_ids.sort_by(|a, b| id_order(a, b));
            Entity {
                id: format!("e{i}"),
                name: names[i].clone(),
                attributes,
                neighbor_ids: adjacency[i].iter().map(|j| format!("e{j}")).collect(),
                document_ids: doc_ids,
            }
        })
        .collect();

    let world = World::new(seed, entities, documents);
    world.check_invariants()?;
    Ok(world)
}
