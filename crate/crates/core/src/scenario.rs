//! Office scenario files: locations, people, facilities, items, files and chat
//! groups, plus which ownership facts the robot starts out knowing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{ChatGroup, EmbodiedState, EntityId, Node, TopoGraph, WorldMemory};

pub const SCENARIO_VERSION: u32 = 1;

const BUNDLED: &str = include_str!("../data/scenario.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario version {0}, expected {SCENARIO_VERSION}")]
    Version(u32),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Workstation,
    Facility,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationSpec {
    pub id: EntityId,
    pub name: String,
    pub kind: LocationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonSpec {
    pub id: EntityId,
    pub name: String,
    #[serde(default)]
    pub location: Option<EntityId>,
    /// Ground-truth availability before any task entry overrides it.
    #[serde(default = "default_true")]
    pub available: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilitySpec {
    pub id: EntityId,
    pub name: String,
    #[serde(default)]
    pub location: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: EntityId,
    pub name: String,
    #[serde(default)]
    pub owner: Option<EntityId>,
    /// Whether the ownership edge is loaded into the robot's long-term memory.
    #[serde(default)]
    pub owner_known: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSpec {
    pub id: String,
    pub name: String,
    pub holder: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub id: String,
    pub name: String,
    pub members: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub robot_start: EntityId,
    pub locations: Vec<LocationSpec>,
    pub people: Vec<PersonSpec>,
    pub facilities: Vec<FacilitySpec>,
    pub items: Vec<ItemSpec>,
    #[serde(default)]
    pub files: Vec<FileSpec>,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
}

impl Scenario {
    /// The default office shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled scenario is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        let mut ids = BTreeSet::new();
        let mut check_id = |path: String, id: &str| {
            if id.is_empty() {
                return Err(schema(path, "empty id"));
            }
            if !ids.insert(id.to_string()) {
                return Err(schema(path, format!("duplicate id '{id}'")));
            }
            Ok(())
        };
        for (i, l) in self.locations.iter().enumerate() {
            check_id(format!("locations[{i}].id"), l.id.as_str())?;
        }
        for (i, p) in self.people.iter().enumerate() {
            check_id(format!("people[{i}].id"), p.id.as_str())?;
        }
        for (i, f) in self.facilities.iter().enumerate() {
            check_id(format!("facilities[{i}].id"), f.id.as_str())?;
        }
        for (i, it) in self.items.iter().enumerate() {
            check_id(format!("items[{i}].id"), it.id.as_str())?;
        }
        for (i, g) in self.groups.iter().enumerate() {
            check_id(format!("groups[{i}].id"), &g.id)?;
        }

        let locations: BTreeSet<&EntityId> = self.locations.iter().map(|l| &l.id).collect();
        let people: BTreeSet<&EntityId> = self.people.iter().map(|p| &p.id).collect();
        if !locations.contains(&self.robot_start) {
            return Err(schema("robot_start", "not a location"));
        }
        let mut names = BTreeSet::new();
        for (i, p) in self.people.iter().enumerate() {
            if p.name.trim().is_empty() {
                return Err(schema(format!("people[{i}].name"), "empty name"));
            }
            if !names.insert(p.name.to_lowercase()) {
                return Err(schema(format!("people[{i}].name"), "duplicate person name"));
            }
            match &p.location {
                None => return Err(schema(format!("people[{i}].location"), "missing location")),
                Some(l) if !locations.contains(l) => {
                    return Err(schema(
                        format!("people[{i}].location"),
                        format!("unknown location '{l}'"),
                    ))
                }
                Some(_) => {}
            }
        }
        for (i, f) in self.facilities.iter().enumerate() {
            match &f.location {
                None => {
                    return Err(schema(format!("facilities[{i}].location"), "missing location"))
                }
                Some(l) if !locations.contains(l) => {
                    return Err(schema(
                        format!("facilities[{i}].location"),
                        format!("unknown location '{l}'"),
                    ))
                }
                Some(_) => {}
            }
        }
        for (i, it) in self.items.iter().enumerate() {
            if it.name.trim().is_empty() {
                return Err(schema(format!("items[{i}].name"), "empty name"));
            }
            match &it.owner {
                Some(o) if !people.contains(o) => {
                    return Err(schema(
                        format!("items[{i}].owner"),
                        format!("unknown person '{o}'"),
                    ))
                }
                None if it.owner_known => {
                    return Err(schema(
                        format!("items[{i}].owner_known"),
                        "known ownership without an owner",
                    ))
                }
                _ => {}
            }
        }
        for (i, f) in self.files.iter().enumerate() {
            if !people.contains(&f.holder) {
                return Err(schema(
                    format!("files[{i}].holder"),
                    format!("unknown person '{}'", f.holder),
                ));
            }
        }
        for (i, g) in self.groups.iter().enumerate() {
            for (j, m) in g.members.iter().enumerate() {
                if !people.contains(m) {
                    return Err(schema(
                        format!("groups[{i}].members[{j}]"),
                        format!("unknown person '{m}'"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn person(&self, name_or_id: &str) -> Option<&PersonSpec> {
        let key = name_or_id.trim();
        self.people
            .iter()
            .find(|p| p.id.as_str() == key)
            .or_else(|| self.people.iter().find(|p| p.name.eq_ignore_ascii_case(key)))
    }

    pub fn person_name<'a>(&'a self, id: &'a EntityId) -> &'a str {
        self.people
            .iter()
            .find(|p| &p.id == id)
            .map(|p| p.name.as_str())
            .unwrap_or(id.as_str())
    }

    pub fn default_availability(&self) -> BTreeMap<EntityId, bool> {
        self.people.iter().map(|p| (p.id.clone(), p.available)).collect()
    }

    /// Every distinct item display name, sorted.
    pub fn item_kinds(&self) -> Vec<String> {
        let kinds: BTreeSet<String> = self.items.iter().map(|i| i.name.to_lowercase()).collect();
        kinds.into_iter().collect()
    }

    /// Owners of an item kind according to ground truth, sorted by id.
    pub fn owners_of_kind(&self, kind: &str) -> Vec<EntityId> {
        self.owners_filtered(kind, |_| true)
    }

    /// Owners of an item kind whose ownership the robot starts out knowing.
    pub fn known_owners_of_kind(&self, kind: &str) -> Vec<EntityId> {
        self.owners_filtered(kind, |i| i.owner_known)
    }

    fn owners_filtered(&self, kind: &str, keep: impl Fn(&ItemSpec) -> bool) -> Vec<EntityId> {
        let set: BTreeSet<EntityId> = self
            .items
            .iter()
            .filter(|i| i.name.eq_ignore_ascii_case(kind) && keep(i))
            .filter_map(|i| i.owner.clone())
            .collect();
        set.into_iter().collect()
    }

    pub fn chat_groups(&self) -> Vec<ChatGroup> {
        self.groups
            .iter()
            .map(|g| ChatGroup {
                id: g.id.clone(),
                name: g.name.clone(),
                members: g.members.clone(),
            })
            .collect()
    }

    fn base_graph(&self, availability: impl Fn(&PersonSpec) -> bool) -> TopoGraph {
        let mut g = TopoGraph::new();
        for l in &self.locations {
            g.upsert_node(Node::location(l.id.clone(), l.name.clone()))
                .expect("validated location");
        }
        for p in &self.people {
            g.upsert_node(Node::human(p.id.clone(), p.name.clone(), availability(p)))
                .expect("validated person");
            if let Some(loc) = &p.location {
                g.set_location(&p.id, loc).expect("validated location edge");
            }
        }
        for f in &self.facilities {
            g.upsert_node(Node::facility(f.id.clone(), f.name.clone()))
                .expect("validated facility");
            if let Some(loc) = &f.location {
                g.set_location(&f.id, loc).expect("validated location edge");
            }
        }
        for it in &self.items {
            g.upsert_node(Node::item(it.id.clone(), it.name.clone()))
                .expect("validated item");
        }
        g
    }

    /// Full ground truth: every ownership edge, scenario availability.
    pub fn truth_graph(&self) -> TopoGraph {
        let mut g = self.base_graph(|p| p.available);
        for it in &self.items {
            if let Some(owner) = &it.owner {
                g.set_owner(&it.id, owner).expect("validated owner");
            }
        }
        g
    }

    /// What the robot knows initially: only the loaded ownership subset, and
    /// everyone presumed available.
    pub fn memory_graph(&self) -> TopoGraph {
        let mut g = self.base_graph(|_| true);
        for it in self.items.iter().filter(|i| i.owner_known) {
            if let Some(owner) = &it.owner {
                g.set_owner(&it.id, owner).expect("validated owner");
            }
        }
        g
    }

    pub fn fresh_memory(&self) -> WorldMemory {
        WorldMemory::new(
            self.memory_graph(),
            self.chat_groups(),
            EmbodiedState::docked_at(self.robot_start.clone()),
        )
    }
}
