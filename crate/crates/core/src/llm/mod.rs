//! Language-model backends: a remote chat-completions client, a positional
//! replay backend for tests, a rule-based policy that stands in for a model
//! offline, and the persona engine that plays office contacts.

pub mod persona;
pub mod policy;
pub mod remote;
pub mod replay;

use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use persona::{classify_reply, persona_reply, PersonaMode, PersonaState, ReplyKind};
pub use policy::PolicyBackend;
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{Fixture, ReplayBackend};

/// Names of the context pieces agents attach to their requests.
pub mod speaker {
    pub const MEMORY: &str = "memory";
    pub const FOCUS: &str = "focus";
    pub const PLAN: &str = "plan";
    pub const EXECUTED: &str = "executed";
    pub const DELTA: &str = "delta";
    pub const FEEDBACK: &str = "feedback";
    pub const OBSERVATION: &str = "observation";
    pub const REFLECTIONS: &str = "reflections";
    /// Baseline strategy name, for backends that care.
    pub const STRATEGY: &str = "strategy";
    pub const MESSAGE: &str = "message";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Perception,
    Planning,
    Decision,
    Reflection,
    Persona,
}

impl RoleTag {
    pub const ALL: [RoleTag; 5] = [
        RoleTag::Perception,
        RoleTag::Planning,
        RoleTag::Decision,
        RoleTag::Reflection,
        RoleTag::Persona,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Perception => "perception",
            RoleTag::Planning => "planning",
            RoleTag::Decision => "decision",
            RoleTag::Reflection => "reflection",
            RoleTag::Persona => "persona",
        }
    }

    pub fn parse(s: &str) -> Option<RoleTag> {
        RoleTag::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub system_prompt: String,
    /// Ordered (speaker, text) pieces, e.g. `("memory", <rendered memory>)`.
    pub context: Vec<(String, String)>,
}

impl ChatRequest {
    pub fn new(role_tag: RoleTag, system_prompt: impl Into<String>) -> Self {
        Self {
            role_tag,
            system_prompt: system_prompt.into(),
            context: Vec::new(),
        }
    }

    pub fn with(mut self, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        self.context.push((speaker.into(), text.into()));
        self
    }

    /// First context piece from `speaker`.
    pub fn get(&self, speaker: &str) -> Option<&str> {
        self.context
            .iter()
            .find(|(s, _)| s == speaker)
            .map(|(_, t)| t.as_str())
    }

    /// Hex SHA-256 over every field, length-prefixed so that piece
    /// boundaries are unambiguous.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        feed(self.role_tag.as_str());
        feed(&self.system_prompt);
        for (speaker, text) in &self.context {
            feed(speaker);
            feed(text);
        }
        hex::encode(h.finalize())
    }

    /// The user-side text sent to chat models: each context piece under a
    /// heading naming its speaker.
    pub fn user_text(&self) -> String {
        let mut out = String::new();
        for (speaker, text) in &self.context {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str("### ");
            out.push_str(speaker);
            out.push('\n');
            out.push_str(text.trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by backend")]
    RateLimited,
    #[error("no fixture response for {role} #{index}")]
    FixtureMiss { role: RoleTag, index: usize },
    #[error("fixture hash mismatch for {role} #{index}: expected {expected}, got {actual}")]
    HashMismatch {
        role: RoleTag,
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend returned empty text")]
    EmptyResponse,
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl LlmError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::RateLimited | LlmError::Transport(_) => true,
            LlmError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Wraps a backend and keeps every successful exchange, so a session can be
/// saved as a replay fixture.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<(RoleTag, String, String)>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Recorded exchanges as (role, request hash, response text).
    pub fn exchanges(&self) -> Vec<(RoleTag, String, String)> {
        self.log.lock().expect("recording log poisoned").clone()
    }

    pub fn to_fixture(&self) -> Fixture {
        let mut fixture = Fixture::default();
        for (role, hash, text) in self.exchanges() {
            fixture.push(role, text, Some(hash));
        }
        fixture
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        self.log.lock().expect("recording log poisoned").push((
            request.role_tag,
            request.hash(),
            response.text.clone(),
        ));
        Ok(response)
    }
}
