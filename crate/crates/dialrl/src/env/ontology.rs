//! Domain ontology and entity database for the slot-filling task.
//!
//! Three constraint slots narrow the search; three requestable slots hold
//! per-entity properties the user may ask for. The whole structure is
//! JSON-configurable; [`Ontology::desk_default`] builds the built-in
//! desk-scale domain (3 slots × 5 values, 30 entities).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

/// A constraint slot: name plus its closed value set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub values: Vec<String>,
}

/// A database row. Constraint values are stored as indices into the slot's
/// value list; requestable values are free strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub name: String,
    pub constraint_values: Vec<usize>,
    pub requestable_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    pub constraint_slots: Vec<SlotDef>,
    pub requestable_slots: Vec<String>,
    entities: Vec<Entity>,
}

/// On-disk layout: entities as flat name→value maps.
#[derive(Serialize, Deserialize)]
struct OntologyFile {
    constraint_slots: Vec<SlotDef>,
    requestable_slots: Vec<String>,
    entities: Vec<BTreeMap<String, String>>,
}

impl Ontology {
    pub fn new(
        constraint_slots: Vec<SlotDef>,
        requestable_slots: Vec<String>,
        entities: Vec<Entity>,
    ) -> Result<Self> {
        let ont = Ontology {
            constraint_slots,
            requestable_slots,
            entities,
        };
        ont.validate()?;
        Ok(ont)
    }

    /// Built-in desk-scale domain: 3 constraint slots × 5 values,
    /// 3 requestable slots, 30 entities. Every slot value occurs in the
    /// database, but most constraint combinations have no match.
    pub fn desk_default() -> Self {
        let constraint_slots = vec![
            SlotDef {
                name: "food".into(),
                values: ["british", "chinese", "french", "indian", "italian"]
                    .map(String::from)
                    .to_vec(),
            },
            SlotDef {
                name: "area".into(),
                values: ["centre", "north", "south", "east", "west"]
                    .map(String::from)
                    .to_vec(),
            },
            SlotDef {
                name: "price".into(),
                values: ["budget", "cheap", "moderate", "expensive", "premium"]
                    .map(String::from)
                    .to_vec(),
            },
        ];
        let requestable_slots = vec!["phone".into(), "address".into(), "postcode".into()];
        let entities = (0..30)
            .map(|i| Entity {
                name: format!("venue_{i:02}"),
                constraint_values: vec![i % 5, (i / 5) % 5, (i % 5 + i / 5) % 5],
                requestable_values: vec![
                    format!("01223-55{i:02}"),
                    format!("{} Mill Lane", i + 1),
                    format!("CB1 1{i:02}"),
                ],
            })
            .collect();
        Ontology::new(constraint_slots, requestable_slots, entities)
            .expect("built-in ontology is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraint_slots.is_empty() {
            return Err(Error::InvalidOntology("no constraint slots".into()));
        }
        for slot in &self.constraint_slots {
            if slot.values.is_empty() {
                return Err(Error::InvalidOntology(format!(
                    "slot {} has no values",
                    slot.name
                )));
            }
        }
        for e in &self.entities {
            if e.constraint_values.len() != self.constraint_slots.len()
                || e.requestable_values.len() != self.requestable_slots.len()
            {
                return Err(Error::InvalidOntology(format!(
                    "entity {} does not cover every slot",
                    e.name
                )));
            }
            for (s, &v) in e.constraint_values.iter().enumerate() {
                if v >= self.constraint_slots[s].values.len() {
                    return Err(Error::InvalidOntology(format!(
                        "entity {} has out-of-range value for {}",
                        e.name, self.constraint_slots[s].name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_constraint_slots(&self) -> usize {
        self.constraint_slots.len()
    }

    pub fn n_requestables(&self) -> usize {
        self.requestable_slots.len()
    }

    pub fn n_values(&self, slot: usize) -> usize {
        self.constraint_slots[slot].values.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, idx: usize) -> &Entity {
        &self.entities[idx]
    }

    pub fn value_index(&self, slot: usize, value: &str) -> Option<usize> {
        self.constraint_slots[slot]
            .values
            .iter()
            .position(|v| v == value)
    }

    /// Indices of entities matching every (slot, value) constraint, in
    /// database order.
    pub fn matching_entities(&self, constraints: &[(usize, usize)]) -> Vec<usize> {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                constraints
                    .iter()
                    .all(|&(s, v)| e.constraint_values[s] == v)
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn entity_matches(&self, entity: usize, constraints: &[(usize, usize)]) -> bool {
        let e = &self.entities[entity];
        constraints
            .iter()
            .all(|&(s, v)| e.constraint_values[s] == v)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entities = self
            .entities
            .iter()
            .map(|e| {
                let mut m = BTreeMap::new();
                m.insert("name".to_string(), e.name.clone());
                for (s, &v) in e.constraint_values.iter().enumerate() {
                    m.insert(
                        self.constraint_slots[s].name.clone(),
                        self.constraint_slots[s].values[v].clone(),
                    );
                }
                for (r, v) in e.requestable_values.iter().enumerate() {
                    m.insert(self.requestable_slots[r].clone(), v.clone());
                }
                m
            })
            .collect();
        serde_json::to_value(OntologyFile {
            constraint_slots: self.constraint_slots.clone(),
            requestable_slots: self.requestable_slots.clone(),
            entities,
        })
        .expect("ontology serialization cannot fail")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: OntologyFile = serde_json::from_value(value)?;
        let mut entities = Vec::with_capacity(file.entities.len());
        for (i, row) in file.entities.iter().enumerate() {
            let name = row
                .get("name")
                .cloned()
                .unwrap_or_else(|| format!("entity_{i}"));
            let mut constraint_values = Vec::with_capacity(file.constraint_slots.len());
            for slot in &file.constraint_slots {
                let raw = row.get(&slot.name).ok_or_else(|| {
                    Error::InvalidOntology(format!("entity {name} is missing slot {}", slot.name))
                })?;
                let idx = slot.values.iter().position(|v| v == raw).ok_or_else(|| {
                    Error::InvalidOntology(format!(
                        "entity {name} has unknown value {raw} for {}",
                        slot.name
                    ))
                })?;
                constraint_values.push(idx);
            }
            let mut requestable_values = Vec::with_capacity(file.requestable_slots.len());
            for r in &file.requestable_slots {
                let raw = row.get(r).ok_or_else(|| {
                    Error::InvalidOntology(format!("entity {name} is missing slot {r}"))
                })?;
                requestable_values.push(raw.clone());
            }
            entities.push(Entity {
                name,
                constraint_values,
                requestable_values,
            });
        }
        Ontology::new(file.constraint_slots, file.requestable_slots, entities)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &self.to_json())?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let value: serde_json::Value = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ontology::from_json(value)
    }
}
