//! Deterministic text-world office. Executes actions against ground truth and
//! reports what happened as dialogue messages and state changes.
//!
//! Time advances one tick per executed action; a `Wait` with nothing to
//! deliver spans three ticks. Travel is instantaneous and every action
//! succeeds, except scanning a QR code that was already used.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::Action;
use crate::dataset::errand::PRINTER_KIND;
use crate::llm::persona::{classify_reply, mentioned_kind, scripted_reply, ReplyKind};
use crate::llm::{persona_reply, PersonaMode, PersonaState};
use crate::memory::{
    Channel, DialogueMessage, EmbodiedState, EntityId, LockerState, Node, NodeKind, StateChange,
    TopoGraph, ASSISTANT,
};
use crate::scenario::{Scenario, ScenarioError};

/// Ticks a `Wait` lasts when no message arrives.
pub const WAIT_TICKS: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("availability given for unknown person `{0}`")]
    UnknownPerson(String),
    #[error("message from unknown sender `{0}`")]
    UnknownSender(String),
    #[error("cannot resolve `{0}` in the world")]
    Unresolved(String),
}

/// Where a physical item currently is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holder {
    Person(EntityId),
    Locker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrToken {
    pub token: String,
    pub issued_to: EntityId,
    pub used: bool,
    /// Superseded by a newer token before being scanned.
    pub revoked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileState {
    pub name: String,
    pub holder: EntityId,
    pub received_tick: u64,
    pub signed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimEvent {
    Message(DialogueMessage),
    Change(StateChange),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Done,
    Waiting,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub events: Vec<SimEvent>,
}

/// Lets tests make individual actions fail. Returning a reason turns the
/// action into a no-op that reports a `fault` state change.
pub trait FaultHook: Send {
    fn check(&mut self, action: &Action, tick: u64) -> Option<String>;
}

pub struct World {
    scenario: Arc<Scenario>,
    truth: TopoGraph,
    availability: BTreeMap<EntityId, bool>,
    robot: EmbodiedState,
    holders: BTreeMap<EntityId, Holder>,
    files: BTreeMap<String, FileState>,
    tokens: BTreeMap<String, QrToken>,
    pending_handover: BTreeMap<EntityId, EntityId>,
    last_question: BTreeMap<EntityId, String>,
    inbox: VecDeque<DialogueMessage>,
    requester: Option<EntityId>,
    tick: u64,
    seq: u64,
    minted: u64,
    mode: PersonaMode,
    style_seed: u64,
    hook: Option<Box<dyn FaultHook>>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("tick", &self.tick)
            .field("robot", &self.robot)
            .field("holders", &self.holders)
            .field("tokens", &self.tokens)
            .finish_non_exhaustive()
    }
}

/// Loads a scenario file and builds its world with default availability.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<World, SimError> {
    let scenario = Scenario::load(path)?;
    World::new(
        Arc::new(scenario),
        &BTreeMap::new(),
        PersonaMode::Scripted,
        0,
    )
}

impl World {
    /// Builds the world from scenario truth with `availability` overriding
    /// the scenario's defaults.
    pub fn new(
        scenario: Arc<Scenario>,
        availability: &BTreeMap<EntityId, bool>,
        mode: PersonaMode,
        style_seed: u64,
    ) -> Result<Self, SimError> {
        let mut avail = scenario.default_availability();
        for (person, value) in availability {
            match avail.get_mut(person) {
                Some(slot) => *slot = *value,
                None => return Err(SimError::UnknownPerson(person.to_string())),
            }
        }
        let mut truth = scenario.truth_graph();
        for (person, value) in &avail {
            truth
                .set_availability(person, *value)
                .expect("scenario people are human nodes");
        }
        let holders = scenario
            .items
            .iter()
            .filter_map(|i| i.owner.clone().map(|o| (i.id.clone(), Holder::Person(o))))
            .collect();
        let files = scenario
            .files
            .iter()
            .map(|f| {
                (
                    f.id.clone(),
                    FileState {
                        name: f.name.clone(),
                        holder: f.holder.clone(),
                        received_tick: 0,
                        signed: false,
                    },
                )
            })
            .collect();
        Ok(Self {
            robot: EmbodiedState::docked_at(scenario.robot_start.clone()),
            scenario,
            truth,
            availability: avail,
            holders,
            files,
            tokens: BTreeMap::new(),
            pending_handover: BTreeMap::new(),
            last_question: BTreeMap::new(),
            inbox: VecDeque::new(),
            requester: None,
            tick: 0,
            seq: 0,
            minted: 0,
            mode,
            style_seed,
            hook: None,
        })
    }

    pub fn set_fault_hook(&mut self, hook: Box<dyn FaultHook>) {
        self.hook = Some(hook);
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn truth(&self) -> &TopoGraph {
        &self.truth
    }

    pub fn robot(&self) -> &EmbodiedState {
        &self.robot
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn tokens(&self) -> &BTreeMap<String, QrToken> {
        &self.tokens
    }

    pub fn holders(&self) -> &BTreeMap<EntityId, Holder> {
        &self.holders
    }

    pub fn files(&self) -> &BTreeMap<String, FileState> {
        &self.files
    }

    pub fn availability(&self, person: &EntityId) -> Option<bool> {
        self.availability.get(person).copied()
    }

    pub fn persona_mode(&self) -> &PersonaMode {
        &self.mode
    }

    /// Operator override of a person's ground-truth availability.
    pub fn set_availability(&mut self, person: &EntityId, value: bool) -> Result<(), SimError> {
        let slot = self
            .availability
            .get_mut(person)
            .ok_or_else(|| SimError::UnknownPerson(person.to_string()))?;
        *slot = value;
        self.truth
            .set_availability(person, value)
            .expect("availability keys are human nodes");
        Ok(())
    }

    pub fn next_seq(&mut self) -> u64 {
        let s = self.seq;
        self.seq += 1;
        s
    }

    /// Registers the instruction's requester and returns the instruction as
    /// the first dialogue message. An item the requester holds and the
    /// instruction mentions becomes theirs to hand over.
    pub fn begin_episode(&mut self, requester: &EntityId, instruction: &str) -> DialogueMessage {
        self.requester = Some(requester.clone());
        let held: Vec<(EntityId, String)> = self
            .holders
            .iter()
            .filter(|(_, h)| **h == Holder::Person(requester.clone()))
            .map(|(id, _)| (id.clone(), self.truth.display_name(id).to_lowercase()))
            .collect();
        let kinds: Vec<String> = held.iter().map(|(_, k)| k.clone()).collect();
        if let Some(kind) = mentioned_kind(instruction, &kinds) {
            if let Some((id, _)) = held.iter().find(|(_, k)| *k == kind) {
                self.pending_handover.insert(requester.clone(), id.clone());
            }
        }
        DialogueMessage {
            seq: self.next_seq(),
            channel: Channel::Direct,
            sender: requester.to_string(),
            recipient: ASSISTANT.to_string(),
            content: instruction.to_string(),
        }
    }

    pub fn persona_state(&self, person: &EntityId) -> Option<PersonaState> {
        let node = self.truth.node(person).filter(|n| n.kind == NodeKind::Human)?;
        let location = self
            .truth
            .query_location(person)
            .map(|l| self.truth.display_name(&l).to_string())
            .unwrap_or_else(|_| "an unknown place".to_string());
        let mut owned: Vec<String> = self
            .scenario
            .items
            .iter()
            .filter(|i| i.owner.as_ref() == Some(person))
            .map(|i| i.name.to_lowercase())
            .collect();
        owned.sort();
        owned.dedup();
        let index = self
            .scenario
            .people
            .iter()
            .position(|p| &p.id == person)
            .unwrap_or(0) as u64;
        Some(PersonaState {
            person: person.clone(),
            name: node.display_name.clone(),
            available: self.availability.get(person).copied().unwrap_or(true),
            location,
            owned,
            vocabulary: self.scenario.item_kinds(),
            style_seed: self.style_seed.wrapping_add(index),
        })
    }

    fn resolve_person(&self, name: &str) -> Result<EntityId, SimError> {
        self.truth
            .resolve_human(name)
            .map(|n| n.id.clone())
            .ok_or_else(|| SimError::Unresolved(name.to_string()))
    }

    fn group_id(&self, name: &str) -> Option<String> {
        let key = name.trim();
        self.scenario
            .groups
            .iter()
            .find(|g| g.id.eq_ignore_ascii_case(key) || g.name.eq_ignore_ascii_case(key))
            .map(|g| g.id.clone())
    }

    fn message(&mut self, channel: Channel, sender: &str, recipient: &str, content: &str) -> SimEvent {
        SimEvent::Message(DialogueMessage {
            seq: self.next_seq(),
            channel,
            sender: sender.to_string(),
            recipient: recipient.to_string(),
            content: content.to_string(),
        })
    }

    fn locker_list(&self) -> String {
        self.robot
            .locker_contents
            .iter()
            .map(EntityId::as_str)
            .collect::<Vec<_>>()
            .join(",")
    }

    fn active_token(&self, person: &EntityId) -> Option<&QrToken> {
        self.tokens
            .values()
            .find(|t| &t.issued_to == person && !t.used && !t.revoked)
    }

    /// Records an affirmative answer: the person will hand over their item
    /// of the kind they were asked about.
    fn note_reply(&mut self, person: &EntityId, kind: ReplyKind, question: &str) {
        if kind != ReplyKind::Affirm {
            return;
        }
        let held: Vec<(EntityId, String)> = self
            .holders
            .iter()
            .filter(|(_, h)| **h == Holder::Person(person.clone()))
            .map(|(id, _)| (id.clone(), self.truth.display_name(id).to_lowercase()))
            .filter(|(_, k)| k != PRINTER_KIND)
            .collect();
        let kinds: Vec<String> = held.iter().map(|(_, k)| k.clone()).collect();
        if let Some(kind) = mentioned_kind(question, &kinds) {
            if let Some((id, _)) = held.iter().find(|(_, k)| *k == kind) {
                self.pending_handover.insert(person.clone(), id.clone());
            }
        }
        if question.to_lowercase().contains("sign") {
            for f in self.files.values_mut() {
                if &f.holder == person {
                    f.signed = true;
                }
            }
        }
    }

    fn reply_to(&self, person: &EntityId, incoming: &DialogueMessage) -> (String, ReplyKind) {
        let Some(state) = self.persona_state(person) else {
            return (String::new(), ReplyKind::Silence);
        };
        match &self.mode {
            PersonaMode::Scripted => {
                let r = scripted_reply(&state, incoming);
                (r.text, r.kind)
            }
            mode => {
                let text = persona_reply(&state, incoming, mode);
                let kind = classify_reply(&text);
                (text, kind)
            }
        }
    }

    /// Executes one validated action.
    pub fn execute(&mut self, action: &Action) -> Result<ExecResult, SimError> {
        self.tick += 1;
        if let Some(hook) = self.hook.as_mut() {
            if let Some(reason) = hook.check(action, self.tick) {
                return Ok(ExecResult {
                    status: ExecStatus::Done,
                    events: vec![SimEvent::Change(StateChange::new("fault", "", reason))],
                });
            }
        }
        let mut events = Vec::new();
        let status = match action {
            Action::Inform { contact, content } => {
                self.converse(contact, content, false, &mut events)?;
                ExecStatus::Done
            }
            Action::Inquire { contact, question } => {
                self.converse(contact, question, true, &mut events)?;
                ExecStatus::Done
            }
            Action::Forward { source, target } => {
                self.forward(source, target, &mut events)?;
                ExecStatus::Done
            }
            Action::SendQRCode { contact } => {
                self.send_qr(contact, &mut events)?;
                ExecStatus::Done
            }
            Action::Wait { .. } => {
                if self.inbox.is_empty() {
                    self.tick += WAIT_TICKS - 1;
                    events.push(SimEvent::Change(StateChange::new("wait", "", "timeout")));
                    ExecStatus::Waiting
                } else {
                    events.extend(self.drain_inbox());
                    ExecStatus::Done
                }
            }
            Action::Move { target_name } => {
                let node = self
                    .truth
                    .resolve(target_name)
                    .filter(|n| n.kind != NodeKind::Item)
                    .ok_or_else(|| SimError::Unresolved(target_name.clone()))?;
                let destination = match node.kind {
                    NodeKind::Location => node.id.clone(),
                    _ => self
                        .truth
                        .query_location(&node.id)
                        .map_err(|_| SimError::Unresolved(target_name.clone()))?,
                };
                let old = std::mem::replace(&mut self.robot.robot_location, destination.clone());
                events.push(SimEvent::Change(StateChange::new(
                    "robot_location",
                    old.as_str(),
                    destination.as_str(),
                )));
                ExecStatus::Done
            }
            Action::WaitInPlace { user } => {
                self.wait_in_place(user, &mut events)?;
                ExecStatus::Done
            }
            Action::Stop { .. } => ExecStatus::Terminated,
        };
        Ok(ExecResult { status, events })
    }

    fn converse(
        &mut self,
        contact: &str,
        text: &str,
        question: bool,
        events: &mut Vec<SimEvent>,
    ) -> Result<(), SimError> {
        if let Some(group) = self.group_id(contact) {
            let out = self.message(Channel::Group, ASSISTANT, &group, text);
            let SimEvent::Message(incoming) = out.clone() else {
                unreachable!()
            };
            events.push(out);
            let mut members: Vec<EntityId> = self
                .scenario
                .groups
                .iter()
                .find(|g| g.id == group)
                .map(|g| g.members.clone())
                .unwrap_or_default();
            members.sort();
            for member in members {
                if question {
                    self.last_question.insert(member.clone(), text.to_string());
                }
                if self.requester.as_ref() == Some(&member) {
                    continue;
                }
                let (reply, kind) = self.reply_to(&member, &incoming);
                if reply.is_empty() {
                    continue;
                }
                let ev = self.message(Channel::Group, member.as_str(), &group, &reply);
                events.push(ev);
                if question {
                    self.note_reply(&member, kind, text);
                }
                // the first capable member answers; the rest stay quiet
                break;
            }
            return Ok(());
        }
        let person = self.resolve_person(contact)?;
        if question {
            self.last_question.insert(person.clone(), text.to_string());
        }
        let out = self.message(Channel::Direct, ASSISTANT, person.as_str(), text);
        let SimEvent::Message(incoming) = out.clone() else {
            unreachable!()
        };
        events.push(out);
        let (reply, kind) = self.reply_to(&person, &incoming);
        if !reply.is_empty() {
            let ev = self.message(Channel::Direct, person.as_str(), ASSISTANT, &reply);
            events.push(ev);
            if question {
                self.note_reply(&person, kind, text);
            }
        }
        Ok(())
    }

    fn forward(
        &mut self,
        source: &str,
        target: &str,
        events: &mut Vec<SimEvent>,
    ) -> Result<(), SimError> {
        let from = self.resolve_person(source)?;
        let to = self.resolve_person(target)?;
        let latest = self
            .files
            .iter()
            .filter(|(_, f)| f.holder == from)
            .max_by_key(|(id, f)| (f.received_tick, std::cmp::Reverse((*id).clone())))
            .map(|(id, _)| id.clone());
        let Some(file_id) = latest else {
            events.push(SimEvent::Change(StateChange::new(
                "forward",
                "",
                format!("{} holds no file", from),
            )));
            return Ok(());
        };
        let tick = self.tick;
        let name = {
            let f = self.files.get_mut(&file_id).expect("file exists");
            f.holder = to.clone();
            f.received_tick = tick;
            f.name.clone()
        };
        let from_name = self.truth.display_name(&from).to_string();
        let note = format!("[file] {name}, forwarded from {from_name}");
        let ev = self.message(Channel::Direct, ASSISTANT, to.as_str(), &note);
        events.push(ev);
        events.push(SimEvent::Change(StateChange::new(
            format!("file_holder:{file_id}"),
            from.as_str(),
            to.as_str(),
        )));

        let can_print = self.availability.get(&to).copied().unwrap_or(false)
            && self
                .scenario
                .items
                .iter()
                .any(|i| i.owner.as_ref() == Some(&to) && i.name.eq_ignore_ascii_case(PRINTER_KIND));
        if can_print {
            self.minted += 1;
            let id = EntityId::new(format!("i-printout-{}", self.minted));
            self.truth
                .upsert_node(Node::item(id.clone(), "printout"))
                .expect("fresh item node");
            self.holders.insert(id.clone(), Holder::Person(to.clone()));
            self.pending_handover.insert(to.clone(), id.clone());
            events.push(SimEvent::Change(StateChange::new(
                "new_item",
                "",
                format!("{id}:printout"),
            )));
            if matches!(self.mode, PersonaMode::Scripted) {
                let ev = self.message(
                    Channel::Direct,
                    to.as_str(),
                    ASSISTANT,
                    "Printed it. The printout is ready for pickup.",
                );
                events.push(ev);
            }
        }
        Ok(())
    }

    fn send_qr(&mut self, contact: &str, events: &mut Vec<SimEvent>) -> Result<(), SimError> {
        let person = self.resolve_person(contact)?;
        for t in self.tokens.values_mut() {
            if t.issued_to == person && !t.used && !t.revoked {
                t.revoked = true;
                events.push(SimEvent::Change(StateChange::new(
                    "qr_revoked",
                    t.token.as_str(),
                    "",
                )));
            }
        }
        let token = format!("qr-{:04}", self.tokens.len() + 1);
        self.tokens.insert(
            token.clone(),
            QrToken {
                token: token.clone(),
                issued_to: person.clone(),
                used: false,
                revoked: false,
            },
        );
        let old = self.robot.active_qr.replace(token.clone()).unwrap_or_default();
        let content = format!("Here is your QR code for the robot's locker: {token}");
        let ev = self.message(Channel::Direct, ASSISTANT, person.as_str(), &content);
        events.push(ev);
        events.push(SimEvent::Change(StateChange::new("active_qr", old, token.as_str())));
        events.push(SimEvent::Change(StateChange::new(
            "qr_token",
            "",
            format!("{token}:{person}"),
        )));
        Ok(())
    }

    fn wait_in_place(&mut self, user: &str, events: &mut Vec<SimEvent>) -> Result<(), SimError> {
        let person = self.resolve_person(user)?;
        let Some(token) = self.active_token(&person).map(|t| t.token.clone()) else {
            let used = self
                .tokens
                .values()
                .filter(|t| t.issued_to == person && (t.used || t.revoked))
                .map(|t| t.token.clone())
                .next_back();
            let (old, new) = match used {
                Some(t) => (t, "token expired".to_string()),
                None => (String::new(), "no token issued".to_string()),
            };
            events.push(SimEvent::Change(StateChange::new("qr_scan", old, new)));
            return Ok(());
        };
        self.tokens.get_mut(&token).expect("token exists").used = true;
        events.push(SimEvent::Change(StateChange::new("qr_scan", "", token.as_str())));
        if self.robot.active_qr.as_deref() == Some(token.as_str()) {
            self.robot.active_qr = None;
            events.push(SimEvent::Change(StateChange::new("active_qr", token.as_str(), "")));
        }
        self.robot.locker = LockerState::Open;
        events.push(SimEvent::Change(StateChange::new("locker", "closed", "open")));

        let before = self.locker_list();
        if !self.robot.locker_contents.is_empty() {
            for item in std::mem::take(&mut self.robot.locker_contents) {
                self.holders.insert(item.clone(), Holder::Person(person.clone()));
                events.push(SimEvent::Change(StateChange::new(
                    format!("item_holder:{item}"),
                    "locker",
                    person.as_str(),
                )));
            }
            events.push(SimEvent::Change(StateChange::new("locker_contents", before, "")));
        } else if let Some(item) = self.pending_handover.remove(&person) {
            if self.holders.get(&item) == Some(&Holder::Person(person.clone())) {
                self.holders.insert(item.clone(), Holder::Locker);
                self.robot.locker_contents.push(item.clone());
                events.push(SimEvent::Change(StateChange::new(
                    format!("item_holder:{item}"),
                    person.as_str(),
                    "locker",
                )));
                events.push(SimEvent::Change(StateChange::new(
                    "locker_contents",
                    before,
                    self.locker_list(),
                )));
            }
        }

        self.robot.locker = LockerState::Closed;
        events.push(SimEvent::Change(StateChange::new("locker", "open", "closed")));
        Ok(())
    }

    /// Queues a message typed by a human playing a persona (or the
    /// requester). It surfaces on the next `Wait` or inbox drain.
    pub fn interactive_inject(&mut self, mut message: DialogueMessage) -> Result<(), SimError> {
        let sender = EntityId::new(message.sender.clone());
        if self.truth.node(&sender).map(|n| n.kind) != Some(NodeKind::Human) {
            return Err(SimError::UnknownSender(message.sender));
        }
        if message.recipient.is_empty() {
            message.recipient = ASSISTANT.to_string();
        }
        message.seq = self.next_seq();
        self.inbox.push_back(message);
        Ok(())
    }

    pub fn has_inbox(&self) -> bool {
        !self.inbox.is_empty()
    }

    /// Delivers queued messages in arrival order.
    pub fn drain_inbox(&mut self) -> Vec<SimEvent> {
        let mut out = Vec::new();
        while let Some(m) = self.inbox.pop_front() {
            let person = EntityId::new(m.sender.clone());
            if let Some(question) = self.last_question.get(&person).cloned() {
                self.note_reply(&person, classify_reply(&m.content), &question);
            }
            out.push(SimEvent::Message(m));
        }
        out
    }

    /// Every item has exactly one holder and the locker holds exactly the
    /// items whose holder is the locker.
    pub fn check_conservation(&self) -> Result<(), String> {
        for node in self.truth.nodes_of(NodeKind::Item) {
            if !self.holders.contains_key(&node.id) {
                return Err(format!("item {} has no holder", node.id));
            }
        }
        let mut in_locker: Vec<&EntityId> = self
            .holders
            .iter()
            .filter(|(_, h)| **h == Holder::Locker)
            .map(|(id, _)| id)
            .collect();
        let mut contents: Vec<&EntityId> = self.robot.locker_contents.iter().collect();
        in_locker.sort();
        contents.sort();
        if in_locker != contents {
            return Err(format!(
                "locker contents {contents:?} disagree with holders {in_locker:?}"
            ));
        }
        for (id, h) in &self.holders {
            if let Holder::Person(p) = h {
                if self.truth.node(p).map(|n| n.kind) != Some(NodeKind::Human) {
                    return Err(format!("item {id} held by non-person {p}"));
                }
            }
        }
        for (id, f) in &self.files {
            if self.truth.node(&f.holder).map(|n| n.kind) != Some(NodeKind::Human) {
                return Err(format!("file {id} held by non-person {}", f.holder));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::StopOutcome;

    fn world() -> World {
        World::new(
            Arc::new(Scenario::bundled()),
            &BTreeMap::new(),
            PersonaMode::Scripted,
            0,
        )
        .unwrap()
    }

    fn changes(r: &ExecResult) -> Vec<&StateChange> {
        r.events
            .iter()
            .filter_map(|e| match e {
                SimEvent::Change(c) => Some(c),
                _ => None,
            })
            .collect()
    }

    fn messages(r: &ExecResult) -> Vec<&DialogueMessage> {
        r.events
            .iter()
            .filter_map(|e| match e {
                SimEvent::Message(m) => Some(m),
                _ => None,
            })
            .collect()
    }

    fn act(w: &mut World, line: &str) -> ExecResult {
        w.execute(&crate::actions::parse_action(line).unwrap()).unwrap()
    }

    #[test]
    fn qr_then_wait_in_place_opens_and_closes_locker() {
        let mut w = world();
        act(&mut w, "ACTION SendQRCode | contact=Lee");
        let r = act(&mut w, "ACTION WaitInPlace | user=Lee");
        assert!(w.tokens().values().all(|t| t.used));
        let locker: Vec<&str> = changes(&r)
            .iter()
            .filter(|c| c.field == "locker")
            .map(|c| c.new.as_str())
            .collect();
        assert_eq!(locker, vec!["open", "closed"]);
    }

    #[test]
    fn second_scan_of_same_token_expires() {
        let mut w = world();
        w.pending_handover
            .insert("h-lee".into(), "i-notebook-lee".into());
        act(&mut w, "ACTION SendQRCode | contact=Lee");
        act(&mut w, "ACTION WaitInPlace | user=Lee");
        assert_eq!(w.robot().locker_contents.len(), 1);
        let r = act(&mut w, "ACTION WaitInPlace | user=Lee");
        let c = changes(&r);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].new, "token expired");
        // no transfer happened: the notebook is still in the locker
        assert_eq!(w.robot().locker_contents.len(), 1);
        assert_eq!(w.robot().locker, LockerState::Closed);
    }

    #[test]
    fn move_goes_to_persons_desk() {
        let mut w = world();
        act(&mut w, "ACTION Move | target_name=Wu");
        let desk = w.truth().query_location(&"h-wu".into()).unwrap();
        assert_eq!(w.robot().robot_location, desk);
        act(&mut w, "ACTION Move | target_name=printer");
        assert_eq!(w.robot().robot_location, EntityId::new("loc-print-room"));
    }

    #[test]
    fn inquiry_to_owner_sets_up_handover() {
        let mut w = world();
        let r = act(&mut w, "ACTION Inquire | contact=Wu | question=Do you have a pen I could borrow?");
        let m = messages(&r);
        assert_eq!(m.len(), 2);
        assert!(m[1].content.contains("pen"));
        act(&mut w, "ACTION SendQRCode | contact=Wu");
        act(&mut w, "ACTION WaitInPlace | user=Wu");
        assert_eq!(w.robot().locker_contents, vec![EntityId::new("i-pen-wu")]);
        act(&mut w, "ACTION SendQRCode | contact=Lee");
        act(&mut w, "ACTION WaitInPlace | user=Lee");
        assert_eq!(
            w.holders()[&EntityId::new("i-pen-wu")],
            Holder::Person("h-lee".into())
        );
        w.check_conservation().unwrap();
    }

    #[test]
    fn unavailable_contact_declines() {
        let mut avail = BTreeMap::new();
        avail.insert(EntityId::new("h-mao"), false);
        let mut w = World::new(Arc::new(Scenario::bundled()), &avail, PersonaMode::Scripted, 0)
            .unwrap();
        let r = act(&mut w, "ACTION Inquire | contact=Mao | question=Could you print a file for Lee?");
        assert!(messages(&r)[1].content.contains("unavailable"));
    }

    #[test]
    fn group_request_gets_first_capable_reply() {
        let mut avail = BTreeMap::new();
        for p in ["h-mao", "h-wu", "h-sun"] {
            avail.insert(EntityId::new(p), false);
        }
        let mut w = World::new(Arc::new(Scenario::bundled()), &avail, PersonaMode::Scripted, 0)
            .unwrap();
        w.begin_episode(&"h-lee".into(), "Please borrow a pen from Mao and bring it to me.");
        let r = act(
            &mut w,
            "ACTION Inquire | contact=Office Group | question=Does anyone have a pen I could borrow?",
        );
        let m = messages(&r);
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].sender, "h-guo");
        assert_eq!(m[1].channel, Channel::Group);
    }

    #[test]
    fn forwarding_to_printer_owner_produces_printout() {
        let mut w = world();
        let r = act(&mut w, "ACTION Forward | source=Lee | target=Mao");
        assert!(changes(&r).iter().any(|c| c.field == "new_item"));
        assert_eq!(w.files()["doc-lee"].holder, EntityId::new("h-mao"));
        act(&mut w, "ACTION SendQRCode | contact=Mao");
        act(&mut w, "ACTION WaitInPlace | user=Mao");
        assert_eq!(w.robot().locker_contents, vec![EntityId::new("i-printout-1")]);
        w.check_conservation().unwrap();
    }

    #[test]
    fn forward_moves_most_recent_file() {
        let mut w = world();
        act(&mut w, "ACTION Forward | source=Lee | target=Chen");
        act(&mut w, "ACTION Forward | source=Chen | target=Lee");
        assert_eq!(w.files()["doc-lee"].holder, EntityId::new("h-lee"));
        assert_eq!(w.files()["doc-chen"].holder, EntityId::new("h-chen"));
    }

    #[test]
    fn new_qr_revokes_previous_unused_one() {
        let mut w = world();
        act(&mut w, "ACTION SendQRCode | contact=Lee");
        act(&mut w, "ACTION SendQRCode | contact=Lee");
        let live: Vec<_> = w.tokens().values().filter(|t| !t.used && !t.revoked).collect();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].token, "qr-0002");
    }

    #[test]
    fn wait_times_out_or_delivers_injected_reply() {
        let mut w = world();
        let r = act(&mut w, "ACTION Wait | content=anyone?");
        assert_eq!(r.status, ExecStatus::Waiting);
        assert_eq!(w.tick(), WAIT_TICKS);

        w.interactive_inject(DialogueMessage {
            seq: 0,
            channel: Channel::Direct,
            sender: "h-wu".into(),
            recipient: ASSISTANT.into(),
            content: "I'm back.".into(),
        })
        .unwrap();
        let r = act(&mut w, "ACTION Wait | content=anyone?");
        assert_eq!(r.status, ExecStatus::Done);
        assert_eq!(messages(&r)[0].content, "I'm back.");
    }

    #[test]
    fn injections_are_fifo_and_senders_checked() {
        let mut w = world();
        for text in ["first", "second"] {
            w.interactive_inject(DialogueMessage {
                seq: 0,
                channel: Channel::Direct,
                sender: "h-mao".into(),
                recipient: String::new(),
                content: text.into(),
            })
            .unwrap();
        }
        let out: Vec<String> = w
            .drain_inbox()
            .into_iter()
            .map(|e| match e {
                SimEvent::Message(m) => m.content,
                SimEvent::Change(_) => unreachable!(),
            })
            .collect();
        assert_eq!(out, vec!["first", "second"]);
        let err = w.interactive_inject(DialogueMessage {
            seq: 0,
            channel: Channel::Direct,
            sender: "h-ghost".into(),
            recipient: String::new(),
            content: "boo".into(),
        });
        assert!(matches!(err, Err(SimError::UnknownSender(_))));
    }

    #[test]
    fn stop_terminates_without_events() {
        let mut w = world();
        let r = w
            .execute(&Action::Stop {
                outcome: StopOutcome::Achieved,
            })
            .unwrap();
        assert_eq!(r.status, ExecStatus::Terminated);
        assert!(r.events.is_empty());
    }

    #[test]
    fn deliver_instruction_marks_requesters_item() {
        let mut w = world();
        w.begin_episode(&"h-lee".into(), "Please deliver my notebook to Mao.");
        act(&mut w, "ACTION SendQRCode | contact=Lee");
        act(&mut w, "ACTION WaitInPlace | user=Lee");
        assert_eq!(w.robot().locker_contents, vec![EntityId::new("i-notebook-lee")]);
    }

    #[test]
    fn fault_hook_turns_action_into_noop() {
        struct FailMoves;
        impl FaultHook for FailMoves {
            fn check(&mut self, action: &Action, _: u64) -> Option<String> {
                matches!(action, Action::Move { .. }).then(|| "wheel jammed".to_string())
            }
        }
        let mut w = world();
        w.set_fault_hook(Box::new(FailMoves));
        let start = w.robot().robot_location.clone();
        let r = act(&mut w, "ACTION Move | target_name=Wu");
        assert_eq!(changes(&r)[0].field, "fault");
        assert_eq!(w.robot().robot_location, start);
    }

    #[test]
    fn scripted_world_is_deterministic() {
        let script = [
            "ACTION Inquire | contact=Office Group | question=Does anyone have a stapler?",
            "ACTION Forward | source=Lee | target=Wu",
            "ACTION SendQRCode | contact=Wu",
            "ACTION WaitInPlace | user=Wu",
            "ACTION Move | target_name=Lee",
        ];
        let run = || {
            let mut w = world();
            script.iter().map(|l| act(&mut w, l)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
