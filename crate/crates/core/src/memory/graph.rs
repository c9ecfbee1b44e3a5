//! Long-term memory: an undirected topological graph over people, facilities,
//! personal items and locations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MemoryError;

/// Opaque identifier of a graph entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Human,
    Facility,
    Item,
    Location,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Human => "human",
            NodeKind::Facility => "facility",
            NodeKind::Item => "item",
            NodeKind::Location => "location",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: EntityId,
    pub kind: NodeKind,
    pub display_name: String,
    /// Present exactly when `kind` is [`NodeKind::Human`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<bool>,
}

impl Node {
    pub fn human(id: impl Into<EntityId>, name: impl Into<String>, available: bool) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Human,
            display_name: name.into(),
            availability: Some(available),
        }
    }

    pub fn facility(id: impl Into<EntityId>, name: impl Into<String>) -> Self {
        Self::plain(id, NodeKind::Facility, name)
    }

    pub fn item(id: impl Into<EntityId>, name: impl Into<String>) -> Self {
        Self::plain(id, NodeKind::Item, name)
    }

    pub fn location(id: impl Into<EntityId>, name: impl Into<String>) -> Self {
        Self::plain(id, NodeKind::Location, name)
    }

    fn plain(id: impl Into<EntityId>, kind: NodeKind, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            display_name: name.into(),
            availability: None,
        }
    }

    fn check(&self) -> Result<(), MemoryError> {
        if self.id.as_str().is_empty() {
            return Err(MemoryError::EmptyId);
        }
        if self.display_name.trim().is_empty() {
            return Err(MemoryError::EmptyName(self.id.clone()));
        }
        match (self.kind, self.availability) {
            (NodeKind::Human, None) => Err(MemoryError::MissingAvailability(self.id.clone())),
            (NodeKind::Human, Some(_)) => Ok(()),
            (kind, Some(_)) => Err(MemoryError::AvailabilityOnNonHuman {
                id: self.id.clone(),
                kind,
            }),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// human | facility -> location
    LocatedAt,
    /// item -> human
    Owns,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub relation: Relation,
    pub from: EntityId,
    pub to: EntityId,
}

impl Edge {
    fn touches(&self, id: &EntityId) -> bool {
        &self.from == id || &self.to == id
    }
}

/// The graph keeps nodes and edges in id-sorted containers so every
/// iteration, rendering and serialization is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopoGraph {
    nodes: BTreeMap<EntityId, Node>,
    edges: BTreeSet<Edge>,
}

impl TopoGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(move |n| n.kind == kind)
    }

    pub fn node(&self, id: &EntityId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.nodes.contains_key(id)
    }

    /// Inserts or replaces a node. Replacing a node with a different kind is
    /// only allowed while it has no incident edges.
    pub fn upsert_node(&mut self, node: Node) -> Result<(), MemoryError> {
        node.check()?;
        if let Some(existing) = self.nodes.get(&node.id) {
            if existing.kind != node.kind && self.edges.iter().any(|e| e.touches(&node.id)) {
                return Err(MemoryError::KindChange {
                    id: node.id.clone(),
                    from: existing.kind,
                    to: node.kind,
                });
            }
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn set_availability(&mut self, person: &EntityId, value: bool) -> Result<(), MemoryError> {
        let node = self
            .nodes
            .get_mut(person)
            .ok_or_else(|| MemoryError::UnknownEntity(person.clone()))?;
        if node.kind != NodeKind::Human {
            return Err(MemoryError::NotHuman(person.clone()));
        }
        node.availability = Some(value);
        Ok(())
    }

    pub fn availability(&self, person: &EntityId) -> Option<bool> {
        self.nodes.get(person).and_then(|n| n.availability)
    }

    /// Adds an edge, replacing the previous edge of a functional relation:
    /// a human or facility has one location, an item has at most one owner.
    pub fn upsert_edge(&mut self, edge: Edge) -> Result<(), MemoryError> {
        let from = self
            .nodes
            .get(&edge.from)
            .ok_or_else(|| MemoryError::UnknownEntity(edge.from.clone()))?;
        let to = self
            .nodes
            .get(&edge.to)
            .ok_or_else(|| MemoryError::UnknownEntity(edge.to.clone()))?;
        let valid = match edge.relation {
            Relation::LocatedAt => {
                matches!(from.kind, NodeKind::Human | NodeKind::Facility)
                    && to.kind == NodeKind::Location
            }
            Relation::Owns => from.kind == NodeKind::Item && to.kind == NodeKind::Human,
        };
        if !valid {
            return Err(MemoryError::InvalidEdge {
                relation: edge.relation,
                from: from.kind,
                to: to.kind,
            });
        }
        self.edges
            .retain(|e| !(e.relation == edge.relation && e.from == edge.from));
        self.edges.insert(edge);
        Ok(())
    }

    pub fn set_location(&mut self, entity: &EntityId, location: &EntityId) -> Result<(), MemoryError> {
        self.upsert_edge(Edge {
            relation: Relation::LocatedAt,
            from: entity.clone(),
            to: location.clone(),
        })
    }

    pub fn set_owner(&mut self, item: &EntityId, owner: &EntityId) -> Result<(), MemoryError> {
        self.upsert_edge(Edge {
            relation: Relation::Owns,
            from: item.clone(),
            to: owner.clone(),
        })
    }

    /// The unique location a human or facility is placed at.
    pub fn query_location(&self, entity: &EntityId) -> Result<EntityId, MemoryError> {
        let node = self
            .nodes
            .get(entity)
            .ok_or_else(|| MemoryError::UnknownEntity(entity.clone()))?;
        if !matches!(node.kind, NodeKind::Human | NodeKind::Facility) {
            return Err(MemoryError::WrongKind {
                id: entity.clone(),
                kind: node.kind,
            });
        }
        // Undirected lookup: the stored direction does not matter.
        self.neighbours(entity, Relation::LocatedAt)
            .find(|other| self.nodes.get(other).map(|n| n.kind) == Some(NodeKind::Location))
            .ok_or_else(|| MemoryError::Unlocated(entity.clone()))
    }

    /// All humans owning at least one item whose display name equals
    /// `item_kind` (case-insensitive), sorted and deduplicated.
    pub fn query_owners(&self, item_kind: &str) -> Vec<EntityId> {
        let owners: BTreeSet<EntityId> = self
            .nodes_of(NodeKind::Item)
            .filter(|n| n.display_name.eq_ignore_ascii_case(item_kind.trim()))
            .filter_map(|item| self.owner_of(&item.id))
            .collect();
        owners.into_iter().collect()
    }

    pub fn owner_of(&self, item: &EntityId) -> Option<EntityId> {
        self.neighbours(item, Relation::Owns)
            .find(|other| self.nodes.get(other).map(|n| n.kind) == Some(NodeKind::Human))
    }

    /// Items owned by a person, sorted by id.
    pub fn items_of(&self, person: &EntityId) -> Vec<&Node> {
        self.neighbours(person, Relation::Owns)
            .filter_map(|id| self.nodes.get(&id))
            .filter(|n| n.kind == NodeKind::Item)
            .collect()
    }

    /// Entities located at `location`, sorted by id.
    pub fn occupants(&self, location: &EntityId) -> Vec<&Node> {
        self.neighbours(location, Relation::LocatedAt)
            .filter_map(|id| self.nodes.get(&id))
            .filter(|n| n.kind != NodeKind::Location)
            .collect()
    }

    fn neighbours<'a>(
        &'a self,
        id: &'a EntityId,
        relation: Relation,
    ) -> impl Iterator<Item = EntityId> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.relation == relation)
            .filter_map(move |e| {
                if &e.from == id {
                    Some(e.to.clone())
                } else if &e.to == id {
                    Some(e.from.clone())
                } else {
                    None
                }
            })
    }

    /// Finds a node by id or by case-insensitive display name. Exact id
    /// matches win; among name matches people come first, then facilities,
    /// then locations, then items.
    pub fn resolve(&self, name: &str) -> Option<&Node> {
        let name = name.trim();
        if let Some(node) = self.nodes.get(&EntityId::new(name)) {
            return Some(node);
        }
        let mut matches: Vec<&Node> = self
            .nodes
            .values()
            .filter(|n| n.display_name.eq_ignore_ascii_case(name))
            .collect();
        matches.sort_by_key(|n| match n.kind {
            NodeKind::Human => 0,
            NodeKind::Facility => 1,
            NodeKind::Location => 2,
            NodeKind::Item => 3,
        });
        matches.into_iter().next()
    }

    pub fn resolve_human(&self, name: &str) -> Option<&Node> {
        let name = name.trim();
        self.nodes
            .get(&EntityId::new(name))
            .filter(|n| n.kind == NodeKind::Human)
            .or_else(|| {
                self.nodes_of(NodeKind::Human)
                    .find(|n| n.display_name.eq_ignore_ascii_case(name))
            })
    }

    pub fn display_name<'a>(&'a self, id: &'a EntityId) -> &'a str {
        self.nodes
            .get(id)
            .map(|n| n.display_name.as_str())
            .unwrap_or(id.as_str())
    }

    /// Structural invariants that every mutation sequence must preserve.
    pub fn check_invariants(&self) -> Result<(), MemoryError> {
        for node in self.nodes.values() {
            node.check()?;
        }
        for edge in &self.edges {
            for end in [&edge.from, &edge.to] {
                if !self.nodes.contains_key(end) {
                    return Err(MemoryError::UnknownEntity(end.clone()));
                }
            }
        }
        for node in self.nodes.values() {
            let located = self
                .edges
                .iter()
                .filter(|e| e.relation == Relation::LocatedAt && e.from == node.id)
                .count();
            let owners = self
                .edges
                .iter()
                .filter(|e| e.relation == Relation::Owns && e.from == node.id)
                .count();
            match node.kind {
                NodeKind::Human | NodeKind::Facility if located != 1 => {
                    return Err(MemoryError::Unlocated(node.id.clone()));
                }
                NodeKind::Item if owners > 1 => {
                    return Err(MemoryError::MultipleOwners(node.id.clone()));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
