//! The memory unit shared by every agent: a long-term topological graph plus
//! short-term stores for the current instruction, dialogue, embodied state and
//! inference trace.

mod graph;
mod render;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Edge, EntityId, Node, NodeKind, Relation, TopoGraph};
pub use render::render_text;

/// Sender/recipient marker for messages from or to the robot itself.
pub const ASSISTANT: &str = "assistant";

/// Number of dialogue messages shown in rendered memory.
pub const DEFAULT_DIALOGUE_TAIL: usize = 20;
/// Number of trace steps shown in rendered memory.
pub const DEFAULT_TRACE_TAIL: usize = 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("entity id must not be empty")]
    EmptyId,
    #[error("entity {0} has an empty display name")]
    EmptyName(EntityId),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("entity {0} is not a human")]
    NotHuman(EntityId),
    #[error("human {0} has no availability attribute")]
    MissingAvailability(EntityId),
    #[error("availability is only allowed on humans, {id} is a {}", kind.as_str())]
    AvailabilityOnNonHuman { id: EntityId, kind: NodeKind },
    #[error("cannot change kind of {id} from {} to {} while it has edges", from.as_str(), to.as_str())]
    KindChange {
        id: EntityId,
        from: NodeKind,
        to: NodeKind,
    },
    #[error("{relation:?} cannot connect {} to {}", from.as_str(), to.as_str())]
    InvalidEdge {
        relation: Relation,
        from: NodeKind,
        to: NodeKind,
    },
    #[error("entity {0} is unlocated")]
    Unlocated(EntityId),
    #[error("item {0} has more than one owner")]
    MultipleOwners(EntityId),
    #[error("{id} is a {}, expected a human or facility", kind.as_str())]
    WrongKind { id: EntityId, kind: NodeKind },
    #[error("package was taken from a different memory")]
    ForeignPackage,
    #[error("message seq {got} does not follow {last}")]
    NonMonotonicSeq { last: u64, got: u64 },
    #[error("message content must not be empty")]
    EmptyContent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Direct,
    Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueMessage {
    pub seq: u64,
    pub channel: Channel,
    /// Entity id of a person, or [`ASSISTANT`].
    pub sender: String,
    /// Entity id of a person, a group id, or [`ASSISTANT`].
    pub recipient: String,
    pub content: String,
}

/// A chat group the assistant belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatGroup {
    pub id: String,
    pub name: String,
    pub members: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockerState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbodiedState {
    pub robot_location: EntityId,
    pub locker: LockerState,
    pub locker_contents: Vec<EntityId>,
    pub active_qr: Option<String>,
}

impl EmbodiedState {
    pub fn docked_at(location: EntityId) -> Self {
        Self {
            robot_location: location,
            locker: LockerState::Closed,
            locker_contents: Vec::new(),
            active_qr: None,
        }
    }
}

/// One observed change of the environment or robot state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub field: String,
    pub old: String,
    pub new: String,
}

impl StateChange {
    pub fn new(field: impl Into<String>, old: impl Into<String>, new: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            old: old.into(),
            new: new.into(),
        }
    }
}

/// What arrived after a snapshot was taken.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementalInfo {
    pub new_messages: Vec<DialogueMessage>,
    pub state_changes: Vec<StateChange>,
}

impl IncrementalInfo {
    pub fn is_empty(&self) -> bool {
        self.new_messages.is_empty() && self.state_changes.is_empty()
    }
}

/// A rendered view of one inference step, as stored in the trace store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u32,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LoggedChange {
    index: u64,
    change: StateChange,
}

/// Immutable snapshot of the memory unit at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryPackage {
    pub step: u32,
    pub instruction: String,
    pub requester: Option<EntityId>,
    pub graph: TopoGraph,
    pub groups: Vec<ChatGroup>,
    pub dialogue: Vec<DialogueMessage>,
    pub embodied: EmbodiedState,
    pub trace: Vec<TraceEntry>,
    pub dialogue_tail: usize,
    pub trace_tail: usize,
    memory_id: u64,
    max_seq: Option<u64>,
    next_change: u64,
}

static NEXT_MEMORY_ID: AtomicU64 = AtomicU64::new(1);

/// The mutable memory unit owned by one episode (or one gateway session).
#[derive(Debug)]
pub struct WorldMemory {
    id: u64,
    graph: TopoGraph,
    groups: Vec<ChatGroup>,
    instruction: String,
    requester: Option<EntityId>,
    dialogue: Vec<DialogueMessage>,
    last_seq: Option<u64>,
    embodied: EmbodiedState,
    trace: Vec<TraceEntry>,
    changes: Vec<LoggedChange>,
    next_change: u64,
    pub dialogue_tail: usize,
    pub trace_tail: usize,
}

impl WorldMemory {
    pub fn new(graph: TopoGraph, groups: Vec<ChatGroup>, embodied: EmbodiedState) -> Self {
        Self {
            id: NEXT_MEMORY_ID.fetch_add(1, Ordering::Relaxed),
            graph,
            groups,
            instruction: String::new(),
            requester: None,
            dialogue: Vec::new(),
            last_seq: None,
            embodied,
            trace: Vec::new(),
            changes: Vec::new(),
            next_change: 0,
            dialogue_tail: DEFAULT_DIALOGUE_TAIL,
            trace_tail: DEFAULT_TRACE_TAIL,
        }
    }

    pub fn graph(&self) -> &TopoGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut TopoGraph {
        &mut self.graph
    }

    pub fn groups(&self) -> &[ChatGroup] {
        &self.groups
    }

    pub fn group(&self, name_or_id: &str) -> Option<&ChatGroup> {
        let key = name_or_id.trim();
        self.groups
            .iter()
            .find(|g| g.id.eq_ignore_ascii_case(key) || g.name.eq_ignore_ascii_case(key))
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn requester(&self) -> Option<&EntityId> {
        self.requester.as_ref()
    }

    pub fn dialogue(&self) -> &[DialogueMessage] {
        &self.dialogue
    }

    pub fn embodied(&self) -> &EmbodiedState {
        &self.embodied
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn set_instruction(&mut self, text: impl Into<String>, requester: Option<EntityId>) {
        self.instruction = text.into();
        self.requester = requester;
    }

    pub fn push_message(&mut self, message: DialogueMessage) -> Result<(), MemoryError> {
        if message.content.trim().is_empty() {
            return Err(MemoryError::EmptyContent);
        }
        if let Some(last) = self.last_seq {
            if message.seq <= last {
                return Err(MemoryError::NonMonotonicSeq {
                    last,
                    got: message.seq,
                });
            }
        }
        self.last_seq = Some(message.seq);
        self.dialogue.push(message);
        Ok(())
    }

    /// Records a state change and mirrors it into the embodied store when it
    /// concerns the robot.
    pub fn record_change(&mut self, change: StateChange) {
        self.apply_embodied(&change);
        self.changes.push(LoggedChange {
            index: self.next_change,
            change,
        });
        self.next_change += 1;
    }

    fn apply_embodied(&mut self, change: &StateChange) {
        match change.field.as_str() {
            "robot_location" => self.embodied.robot_location = EntityId::new(change.new.clone()),
            "locker" => {
                self.embodied.locker = if change.new == "open" {
                    LockerState::Open
                } else {
                    LockerState::Closed
                }
            }
            "locker_contents" => {
                self.embodied.locker_contents = change
                    .new
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(EntityId::from)
                    .collect()
            }
            "active_qr" => {
                self.embodied.active_qr = if change.new.is_empty() || change.new == "none" {
                    None
                } else {
                    Some(change.new.clone())
                }
            }
            _ => {}
        }
    }

    pub fn push_trace(&mut self, entry: TraceEntry) {
        self.trace.push(entry);
    }

    pub fn snapshot(&self, step: u32) -> MemoryPackage {
        MemoryPackage {
            step,
            instruction: self.instruction.clone(),
            requester: self.requester.clone(),
            graph: self.graph.clone(),
            groups: self.groups.clone(),
            dialogue: self.dialogue.clone(),
            embodied: self.embodied.clone(),
            trace: self.trace.clone(),
            dialogue_tail: self.dialogue_tail,
            trace_tail: self.trace_tail,
            memory_id: self.id,
            max_seq: self.last_seq,
            next_change: self.next_change,
        }
    }

    /// Clears everything tied to the finished instruction. The long-term graph,
    /// including availability learned during the episode, and the embodied
    /// state are kept.
    pub fn reset_short_term(&mut self) {
        self.instruction.clear();
        self.requester = None;
        self.dialogue.clear();
        self.trace.clear();
        self.changes.clear();
    }

    pub fn delta_since(&self, package: &MemoryPackage) -> Result<IncrementalInfo, MemoryError> {
        if package.memory_id != self.id {
            return Err(MemoryError::ForeignPackage);
        }
        let new_messages = self
            .dialogue
            .iter()
            .filter(|m| package.max_seq.is_none_or(|max| m.seq > max))
            .cloned()
            .collect();
        let state_changes = self
            .changes
            .iter()
            .filter(|c| c.index >= package.next_change)
            .map(|c| c.change.clone())
            .collect();
        Ok(IncrementalInfo {
            new_messages,
            state_changes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn memory() -> WorldMemory {
        let mut g = TopoGraph::new();
        g.upsert_node(Node::location("dock", "Reception")).unwrap();
        g.upsert_node(Node::location("ws1", "Workstation 1")).unwrap();
        g.upsert_node(Node::human("h-lee", "Lee", true)).unwrap();
        g.upsert_node(Node::human("h-mao", "Mao", true)).unwrap();
        g.set_location(&"h-lee".into(), &"ws1".into()).unwrap();
        g.set_location(&"h-mao".into(), &"ws1".into()).unwrap();
        WorldMemory::new(g, Vec::new(), EmbodiedState::docked_at("dock".into()))
    }

    fn msg(seq: u64, sender: &str, content: &str) -> DialogueMessage {
        DialogueMessage {
            seq,
            channel: Channel::Direct,
            sender: sender.into(),
            recipient: ASSISTANT.into(),
            content: content.into(),
        }
    }

    #[test]
    fn initial_snapshot_is_empty() {
        let m = memory();
        let p = m.snapshot(0);
        assert!(p.dialogue.is_empty());
        assert!(p.trace.is_empty());
        let text = render_text(&p);
        assert!(text.contains("Lee"));
        assert!(text.contains("Workstation 1"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut m = memory();
        m.set_instruction("Please bring me a pen.", Some("h-lee".into()));
        m.push_message(msg(0, "h-lee", "Please bring me a pen.")).unwrap();
        assert_eq!(render_text(&m.snapshot(1)), render_text(&m.snapshot(1)));
    }

    #[test]
    fn dialogue_section_lists_messages_in_order() {
        let mut m = memory();
        for (seq, text) in [(1, "first"), (2, "second"), (3, "third")] {
            m.push_message(msg(seq, "h-mao", text)).unwrap();
        }
        let text = render_text(&m.snapshot(2));
        let dialogue: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("## Dialogue"))
            .skip(1)
            .take_while(|l| !l.starts_with("## "))
            .filter(|l| !l.trim().is_empty())
            .collect();
        assert_eq!(dialogue.len(), 3);
        assert!(dialogue[0].contains("first"));
        assert!(dialogue[2].contains("third"));
    }

    #[test]
    fn dialogue_tail_is_bounded() {
        let mut m = memory();
        m.dialogue_tail = 2;
        for seq in 0..5 {
            m.push_message(msg(seq, "h-mao", &format!("message {seq}"))).unwrap();
        }
        let text = render_text(&m.snapshot(1));
        assert!(!text.contains("message 2"));
        assert!(text.contains("message 3"));
        assert!(text.contains("message 4"));
        assert_eq!(m.dialogue().len(), 5);
    }

    #[test]
    fn seq_must_increase() {
        let mut m = memory();
        m.push_message(msg(3, "h-mao", "a")).unwrap();
        assert!(matches!(
            m.push_message(msg(3, "h-mao", "b")),
            Err(MemoryError::NonMonotonicSeq { .. })
        ));
        assert!(matches!(
            m.push_message(msg(4, "h-mao", "  ")),
            Err(MemoryError::EmptyContent)
        ));
    }

    #[test]
    fn reset_keeps_graph_and_learned_availability() {
        let mut m = memory();
        m.set_instruction("x", Some("h-lee".into()));
        m.push_message(msg(0, "h-lee", "x")).unwrap();
        m.graph_mut().set_availability(&"h-mao".into(), false).unwrap();
        m.push_trace(TraceEntry {
            step: 0,
            lines: vec!["ACTION Stop | outcome=achieved".into()],
        });
        let nodes = m.graph().node_count();
        let edges: Vec<Edge> = m.graph().edges().cloned().collect();

        m.reset_short_term();
        assert!(m.dialogue().is_empty());
        assert!(m.trace().is_empty());
        assert!(m.instruction().is_empty());
        assert_eq!(m.graph().node_count(), nodes);
        assert_eq!(m.graph().edges().cloned().collect::<Vec<_>>(), edges);
        assert_eq!(m.graph().availability(&"h-mao".into()), Some(false));

        let once = render_text(&m.snapshot(0));
        m.reset_short_term();
        assert_eq!(render_text(&m.snapshot(0)), once);
    }

    #[test]
    fn empty_delta_without_activity() {
        let m = memory();
        let p = m.snapshot(0);
        assert!(m.delta_since(&p).unwrap().is_empty());
    }

    #[test]
    fn delta_with_one_reply() {
        let mut m = memory();
        let p = m.snapshot(0);
        m.push_message(msg(1, "h-mao", "Sure.")).unwrap();
        assert_eq!(m.delta_since(&p).unwrap().new_messages.len(), 1);
    }

    #[test]
    fn delta_after_move_and_reply() {
        let mut m = memory();
        m.push_message(msg(0, "h-lee", "Please go to Mao.")).unwrap();
        let p = m.snapshot(1);
        m.record_change(StateChange::new("robot_location", "dock", "ws1"));
        m.push_message(msg(1, "h-mao", "I'm here.")).unwrap();
        let delta = m.delta_since(&p).unwrap();
        assert_eq!(delta.state_changes.len(), 1);
        assert_eq!(delta.state_changes[0].field, "robot_location");
        assert_eq!(delta.new_messages.len(), 1);
        assert_eq!(delta.new_messages[0].seq, 1);
        assert_eq!(m.embodied().robot_location, EntityId::new("ws1"));
    }

    #[test]
    fn foreign_package_is_rejected() {
        let a = memory();
        let b = memory();
        assert_eq!(
            a.delta_since(&b.snapshot(0)),
            Err(MemoryError::ForeignPackage)
        );
    }
}
