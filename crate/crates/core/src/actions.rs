//! The action vocabulary, its single-line wire format and validation against
//! the robot's memory.
//!
//! Grammar of one action line:
//!
//! ```text
//! line   := "ACTION" ws kind ( ws? "|" ws? param )*
//! param  := name "=" value
//! ```
//!
//! `kind` is matched case-insensitively and ignoring spaces or underscores, so
//! `SendQRCode`, `send_qr_code` and `Send QR code` are the same kind. Inside a
//! value, `\|`, `\n` and `\\` escape a pipe, a newline and a backslash.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::memory::{ChatGroup, NodeKind, TopoGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Inform,
    Inquire,
    Forward,
    SendQRCode,
    Wait,
    Move,
    WaitInPlace,
    Stop,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::Inform,
        ActionKind::Inquire,
        ActionKind::Forward,
        ActionKind::SendQRCode,
        ActionKind::Wait,
        ActionKind::Move,
        ActionKind::WaitInPlace,
        ActionKind::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Inform => "Inform",
            ActionKind::Inquire => "Inquire",
            ActionKind::Forward => "Forward",
            ActionKind::SendQRCode => "SendQRCode",
            ActionKind::Wait => "Wait",
            ActionKind::Move => "Move",
            ActionKind::WaitInPlace => "WaitInPlace",
            ActionKind::Stop => "Stop",
        }
    }

    pub fn class(self) -> ActionClass {
        match self {
            ActionKind::Inform
            | ActionKind::Inquire
            | ActionKind::Forward
            | ActionKind::SendQRCode
            | ActionKind::Wait => ActionClass::Cyber,
            ActionKind::Move | ActionKind::WaitInPlace => ActionClass::Real,
            ActionKind::Stop => ActionClass::Generic,
        }
    }

    fn params(self) -> &'static [&'static str] {
        match self {
            ActionKind::Inform => &["contact", "content"],
            ActionKind::Inquire => &["contact", "question"],
            ActionKind::Forward => &["source", "target"],
            ActionKind::SendQRCode => &["contact"],
            ActionKind::Wait => &["content"],
            ActionKind::Move => &["target_name"],
            ActionKind::WaitInPlace => &["user"],
            ActionKind::Stop => &["outcome"],
        }
    }

    fn lookup(raw: &str) -> Option<ActionKind> {
        let key: String = raw
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        ActionKind::ALL
            .into_iter()
            .find(|k| k.name().to_lowercase() == key)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cyber tasks run on the assistant's messaging avatar, real-world tasks on
/// the robot body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Cyber,
    Real,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopOutcome {
    Achieved,
    Unachievable,
}

impl StopOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            StopOutcome::Achieved => "achieved",
            StopOutcome::Unachievable => "unachievable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Inform { contact: String, content: String },
    Inquire { contact: String, question: String },
    Forward { source: String, target: String },
    SendQRCode { contact: String },
    Wait { content: String },
    Move { target_name: String },
    WaitInPlace { user: String },
    Stop { outcome: StopOutcome },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Inform { .. } => ActionKind::Inform,
            Action::Inquire { .. } => ActionKind::Inquire,
            Action::Forward { .. } => ActionKind::Forward,
            Action::SendQRCode { .. } => ActionKind::SendQRCode,
            Action::Wait { .. } => ActionKind::Wait,
            Action::Move { .. } => ActionKind::Move,
            Action::WaitInPlace { .. } => ActionKind::WaitInPlace,
            Action::Stop { .. } => ActionKind::Stop,
        }
    }

    pub fn class(&self) -> ActionClass {
        self.kind().class()
    }

    /// The person, group or place the action is aimed at. For `Forward` this
    /// is the receiving contact.
    pub fn target(&self) -> Option<&str> {
        match self {
            Action::Inform { contact, .. }
            | Action::Inquire { contact, .. }
            | Action::SendQRCode { contact } => Some(contact),
            Action::Forward { target, .. } => Some(target),
            Action::Move { target_name } => Some(target_name),
            Action::WaitInPlace { user } => Some(user),
            Action::Wait { .. } | Action::Stop { .. } => None,
        }
    }

    pub fn source(&self) -> Option<&str> {
        match self {
            Action::Forward { source, .. } => Some(source),
            _ => None,
        }
    }

    /// Free text carried by the action, if any.
    pub fn text(&self) -> Option<&str> {
        match self {
            Action::Inform { content, .. } | Action::Wait { content } => Some(content),
            Action::Inquire { question, .. } => Some(question),
            _ => None,
        }
    }

    fn values(&self) -> Vec<&str> {
        match self {
            Action::Inform { contact, content } => vec![contact, content],
            Action::Inquire { contact, question } => vec![contact, question],
            Action::Forward { source, target } => vec![source, target],
            Action::SendQRCode { contact } => vec![contact],
            Action::Wait { content } => vec![content],
            Action::Move { target_name } => vec![target_name],
            Action::WaitInPlace { user } => vec![user],
            Action::Stop { outcome } => vec![outcome.as_str()],
        }
    }

    /// Every value is non-empty and carries no surrounding whitespace, which is
    /// what the parser produces.
    pub fn is_well_formed(&self) -> bool {
        self.values()
            .iter()
            .all(|v| !v.is_empty() && v.trim() == *v)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&render_action(self))
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = String::deserialize(deserializer)?;
        parse_action(&line).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason}: `{fragment}`")]
pub struct ParseError {
    pub reason: ParseReason,
    pub fragment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseReason {
    #[error("not an action line")]
    NotAnAction,
    #[error("unknown kind")]
    UnknownKind,
    #[error("missing parameter `{0}`")]
    MissingParam(&'static str),
    #[error("unknown parameter")]
    UnknownParam,
    #[error("duplicate parameter")]
    DuplicateParam,
    #[error("empty value")]
    EmptyValue,
    #[error("outcome must be `achieved` or `unachievable`")]
    BadOutcome,
}

fn parse_err(reason: ParseReason, fragment: &str) -> ParseError {
    ParseError {
        reason,
        fragment: fragment.trim().to_string(),
    }
}

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Splits on unescaped pipes and resolves escapes in each segment.
fn split_segments(line: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('n') => current.push('\n'),
                Some(other) => current.push(other),
                None => current.push('\\'),
            },
            '|' => segments.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    segments.push(current);
    segments
}

/// Renders the canonical single-line form of an action.
pub fn render_action(action: &Action) -> String {
    let kind = action.kind();
    let mut line = format!("ACTION {}", kind.name());
    for (name, value) in kind.params().iter().zip(action.values()) {
        line.push_str(" | ");
        line.push_str(name);
        line.push('=');
        line.push_str(&escape(value));
    }
    line
}

pub fn parse_action(text_line: &str) -> Result<Action, ParseError> {
    let line = text_line.trim();
    let mut segments = split_segments(line).into_iter();
    let head = segments.next().unwrap_or_default();
    let head = head.trim();
    let rest = match head.split_once(char::is_whitespace) {
        Some((tag, rest)) if tag.eq_ignore_ascii_case("ACTION") => rest.trim(),
        _ => return Err(parse_err(ParseReason::NotAnAction, line)),
    };
    let kind = ActionKind::lookup(rest).ok_or_else(|| parse_err(ParseReason::UnknownKind, rest))?;

    let expected = kind.params();
    let mut values: Vec<Option<String>> = vec![None; expected.len()];
    for segment in segments {
        let (name, value) = segment
            .split_once('=')
            .ok_or_else(|| parse_err(ParseReason::UnknownParam, &segment))?;
        let name = name.trim().to_ascii_lowercase();
        let slot = expected
            .iter()
            .position(|p| *p == name)
            .ok_or_else(|| parse_err(ParseReason::UnknownParam, &segment))?;
        if values[slot].is_some() {
            return Err(parse_err(ParseReason::DuplicateParam, &segment));
        }
        let value = value.trim();
        if value.is_empty() {
            return Err(parse_err(ParseReason::EmptyValue, &segment));
        }
        values[slot] = Some(value.to_string());
    }
    let mut values = values.into_iter().zip(expected.iter());
    let mut take = || -> Result<String, ParseError> {
        let (value, name) = values.next().expect("arity matches kind");
        value.ok_or_else(|| parse_err(ParseReason::MissingParam(name), line))
    };

    let action = match kind {
        ActionKind::Inform => Action::Inform {
            contact: take()?,
            content: take()?,
        },
        ActionKind::Inquire => Action::Inquire {
            contact: take()?,
            question: take()?,
        },
        ActionKind::Forward => Action::Forward {
            source: take()?,
            target: take()?,
        },
        ActionKind::SendQRCode => Action::SendQRCode { contact: take()? },
        ActionKind::Wait => Action::Wait { content: take()? },
        ActionKind::Move => Action::Move {
            target_name: take()?,
        },
        ActionKind::WaitInPlace => Action::WaitInPlace { user: take()? },
        ActionKind::Stop => {
            let raw = take()?;
            let outcome = match raw.to_ascii_lowercase().as_str() {
                "achieved" => StopOutcome::Achieved,
                "unachievable" => StopOutcome::Unachievable,
                _ => return Err(parse_err(ParseReason::BadOutcome, &raw)),
            };
            Action::Stop { outcome }
        }
    };
    Ok(action)
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ValidationError {
    #[error("unknown contact `{0}`")]
    UnknownContact(String),
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("cannot forward a file from `{0}` to themselves")]
    SelfForward(String),
}

fn is_person(graph: &TopoGraph, name: &str) -> bool {
    graph.resolve_human(name).is_some()
}

fn is_group(groups: &[ChatGroup], name: &str) -> bool {
    let key = name.trim();
    groups
        .iter()
        .any(|g| g.id.eq_ignore_ascii_case(key) || g.name.eq_ignore_ascii_case(key))
}

/// Checks that every name in the action refers to something the robot knows.
/// Messages may go to people or chat groups; everything else needs a person,
/// except `Move`, which also accepts facilities and locations.
pub fn validate(
    action: &Action,
    graph: &TopoGraph,
    groups: &[ChatGroup],
) -> Result<(), ValidationError> {
    let person = |name: &str| {
        if is_person(graph, name) {
            Ok(())
        } else {
            Err(ValidationError::UnknownContact(name.to_string()))
        }
    };
    match action {
        Action::Inform { contact, .. } | Action::Inquire { contact, .. } => {
            if is_group(groups, contact) {
                Ok(())
            } else {
                person(contact)
            }
        }
        Action::SendQRCode { contact } => person(contact),
        Action::WaitInPlace { user } => person(user),
        Action::Forward { source, target } => {
            person(source)?;
            person(target)?;
            let a = graph.resolve_human(source).map(|n| &n.id);
            let b = graph.resolve_human(target).map(|n| &n.id);
            if a == b {
                Err(ValidationError::SelfForward(source.clone()))
            } else {
                Ok(())
            }
        }
        Action::Move { target_name } => match graph.resolve(target_name) {
            Some(n) if n.kind != NodeKind::Item => Ok(()),
            _ => Err(ValidationError::UnknownPlace(target_name.clone())),
        },
        Action::Wait { .. } | Action::Stop { .. } => Ok(()),
    }
}

/// Execution outcome of one action inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOutcome {
    Done,
    Waiting,
    Terminated,
    /// Not executed because validation failed.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: u32,
    pub action: Action,
    pub exec_outcome: ExecOutcome,
    pub emitted_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}
