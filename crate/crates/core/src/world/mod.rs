//! Deterministic simulated knowledge world.
//!
//! A world is a set of entities connected by a symmetric neighbor graph, each
//! carrying facts across five closed attribute dimensions, plus a document
//! store derived from those facts. Everything is generated from a single seed
//! ([`generate::generate_world`]), so two runs with the same seed produce
//! byte-identical fixtures.

pub mod generate;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

/// Closed set of attribute dimensions a fact can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeDimension {
    Spatial,
    Temporal,
    Numerical,
    Categorical,
    EntityRelation,
}

impl AttributeDimension {
    pub const ALL: [AttributeDimension; 5] = [
        AttributeDimension::Spatial,
        AttributeDimension::Temporal,
        AttributeDimension::Numerical,
        AttributeDimension::Categorical,
        AttributeDimension::EntityRelation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttributeDimension::Spatial => "spatial",
            AttributeDimension::Temporal => "temporal",
            AttributeDimension::Numerical => "numerical",
            AttributeDimension::Categorical => "categorical",
            AttributeDimension::EntityRelation => "entity_relation",
        }
    }
}

impl std::fmt::Display for AttributeDimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (predicate, value) attribute of an entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub predicate: String,
    pub value: String,
}

impl Fact {
    pub fn new(predicate: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            predicate: predicate.into(),
            value: value.into(),
        }
    }
}

/// An entity: named node with per-dimension facts, symmetric neighbor links,
/// and the documents that mention it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub attributes: BTreeMap<AttributeDimension, Vec<Fact>>,
    pub neighbor_ids: Vec<String>,
    pub document_ids: Vec<String>,
}

impl Entity {
    /// All facts flattened as (dimension, fact) pairs, in dimension order.
    pub fn all_facts(&self) -> impl Iterator<Item = (AttributeDimension, &Fact)> {
        self.attributes
            .iter()
            .flat_map(|(dim, facts)| facts.iter().map(move |f| (*dim, f)))
    }

    /// Whether this entity carries the exact (predicate, value) fact in the
    /// given dimension.
    pub fn has_fact(&self, dim: AttributeDimension, predicate: &str, value: &str) -> bool {
        self.attributes
            .get(&dim)
            .map(|facts| facts.iter().any(|f| f.predicate == predicate && f.value == value))
            .unwrap_or(false)
    }
}

/// A document: titled text unit mentioning one or more entities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub entity_ids: Vec<String>,
}

/// One search hit: document id plus its token-overlap score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: usize,
    pub title: String,
}

/// The full simulated world.
#[derive(Debug, Clone)]
pub struct World {
    pub seed: u64,
    entities: BTreeMap<String, Entity>,
    documents: BTreeMap<String, Document>,
}

impl World {
    pub fn new(seed: u64, entities: Vec<Entity>, documents: Vec<Document>) -> Self {
        Self {
            seed,
            entities: entities.into_iter().map(|e| (e.id.clone(), e)).collect(),
            documents: documents.into_iter().map(|d| (d.id.clone(), d)).collect(),
        }
    }

    pub fn entity(&self, id: &str) -> Result<&Entity> {
        self.entities
            .get(id)
            .ok_or_else(|| Error::not_found("entity", id))
    }

    pub fn document(&self, id: &str) -> Result<&Document> {
        self.documents
            .get(id)
            .ok_or_else(|| Error::not_found("document", id))
    }

    /// Entities in ascending id order (numeric-aware: e2 < e10).
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        let mut ids: Vec<&String> = self.entities.keys().collect();
        ids.sort_by(|a, b| id_order(a, b));
        ids.into_iter().map(move |id| &self.entities[id])
    }

    /// Documents in ascending id order.
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        let mut ids: Vec<&String> = self.documents.keys().collect();
        ids.sort_by(|a, b| id_order(a, b));
        ids.into_iter().map(move |id| &self.documents[id])
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    /// Find the entity with this exact name, if any.
    pub fn entity_by_name(&self, name: &str) -> Option<&Entity> {
        self.entities().find(|e| e.name == name)
    }

    /// Lexical search: score each document by how many distinct query tokens
    /// appear in its token set (title + body). Ranked by descending score,
    /// ties broken by ascending document id; zero-score documents are
    /// dropped.
    pub fn search(&self, query: &str, limit: usize) -> Vec<SearchHit> {
        let query_tokens: BTreeSet<String> = tokenize(query).into_iter().collect();
        if query_tokens.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<SearchHit> = self
            .documents()
            .filter_map(|doc| {
                let doc_tokens: BTreeSet<String> =
                    tokenize(&format!("{} {}", doc.title, doc.body)).into_iter().collect();
                let score = query_tokens.intersection(&doc_tokens).count();
                (score > 0).then(|| SearchHit {
                    doc_id: doc.id.clone(),
                    score,
                    title: doc.title.clone(),
                })
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then_with(|| id_order(&a.doc_id, &b.doc_id))
        });
        hits.truncate(limit);
        hits
    }

    /// Verify structural invariants: symmetric adjacency, no self-loops,
    /// documents referencing known entities, entity doc lists consistent.
    pub fn check_invariants(&self) -> Result<()> {
        for entity in self.entities.values() {
            for nid in &entity.neighbor_ids {
                if nid == &entity.id {
                    return Err(Error::invalid(format!("{} has a self-loop", entity.id)));
                }
                let neighbor = self.entity(nid)?;
                if !neighbor.neighbor_ids.contains(&entity.id) {
                    return Err(Error::invalid(format!(
                        "asymmetric edge {} -> {}",
                        entity.id, nid
                    )));
                }
            }
            for did in &entity.document_ids {
                let doc = self.document(did)?;
                if !doc.entity_ids.contains(&entity.id) {
                    return Err(Error::invalid(format!(
                        "{} lists {} but the document does not mention it back",
                        entity.id, did
                    )));
                }
            }
        }
        for doc in self.documents.values() {
            for eid in &doc.entity_ids {
                self.entity(eid)?;
            }
        }
        Ok(())
    }
}

/// Order two ids of the form `<prefix><number>` numerically when the shape
/// matches, falling back to plain string order.
pub fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    fn split(id: &str) -> Option<(&str, u64)> {
        let pos = id.find(|c: char| c.is_ascii_digit())?;
        let (prefix, digits) = id.split_at(pos);
        digits.parse::<u64>().ok().map(|n| (prefix, n))
    }
    match (split(a), split(b)) {
        (Some((pa, na)), Some((pb, nb))) if pa == pb => na.cmp(&nb),
        _ => a.cmp(b),
    }
}

const SCHEMA: &str = "kg.v1";

#[derive(Serialize, Deserialize)]
struct FixtureHeader {
    schema: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FixtureRecord {
    Entity(Entity),
    Document(Document),
}

/// Write the world as a JSONL fixture: a one-line header carrying the schema
/// tag and generation seed, then every entity and document in id order.
pub fn write_fixture<W: Write>(world: &World, mut out: W) -> Result<()> {
    let header = FixtureHeader {
        schema: SCHEMA.to_string(),
        seed: world.seed,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for entity in world.entities() {
        let rec = FixtureRecord::Entity(entity.clone());
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    for doc in world.documents() {
        let rec = FixtureRecord::Document(doc.clone());
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

/// Read a world fixture produced by [`write_fixture`].
pub fn read_fixture<R: BufRead>(input: R) -> Result<World> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Schema {
        line: 1,
        msg: "empty fixture".to_string(),
    })?;
    let header: FixtureHeader =
        serde_json::from_str(&first?).map_err(|e| Error::Schema {
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
    if header.schema != SCHEMA {
        return Err(Error::Schema {
            line: 1,
            msg: format!("unsupported schema {:?}", header.schema),
        });
    }
    let mut entities = Vec::new();
    let mut documents = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        match rec {
            FixtureRecord::Entity(e) => entities.push(e),
            FixtureRecord::Document(d) => documents.push(d),
        }
    }
    let world = World::new(header.seed, entities, documents);
    world.check_invariants()?;
    Ok(world)
}

/// Convenience: write the fixture to a file path.
pub fn save_fixture(world: &World, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_fixture(world, std::io::BufWriter::new(file))
}

/// Convenience: load a fixture from a file path.
pub fn load_fixture(path: &Path) -> Result<World> {
    let file = std::fs::File::open(path)?;
    read_fixture(std::io::BufReader::new(file))
}
