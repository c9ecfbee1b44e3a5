//! Episode traces as JSON lines: a header, one record per step, a footer.
//!
//! The same [`TraceEvent`] type carries the finer-grained live events a
//! session streams while an episode runs. Keeping only header, step and
//! footer events of a live stream yields the persisted trace.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionRecord;
use crate::agents::{
    AblationFlags, PerceptionPackage, Plan, ReflectionResult, StepRecord, StrategyKind, Verdict,
};
use crate::sim::SimEvent;

pub const TRACE_SCHEMA: &str = "deskmate.trace/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub entry: String,
    pub strategy: StrategyKind,
    pub flags: AblationFlags,
    pub seed: u64,
    pub max_steps: u32,
    pub backend: String,
    pub prompt_version: String,
    pub requester: String,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub verdict: Verdict,
    pub steps: u32,
    pub actions: u32,
    pub rejected: u32,
    pub malformed_steps: u32,
    /// The episode was cut short by a backend failure.
    #[serde(default)]
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Header(TraceHeader),
    Step(StepRecord),
    Footer(TraceFooter),
    StepStarted {
        step: u32,
    },
    Perception {
        step: u32,
        perception: PerceptionPackage,
    },
    Plan {
        step: u32,
        plan: Plan,
    },
    Thought {
        step: u32,
        text: String,
    },
    Action {
        step: u32,
        record: ActionRecord,
    },
    Exec {
        step: u32,
        event: SimEvent,
    },
    /// The loop is paused for a human reply (interactive sessions).
    Awaiting {
        step: u32,
        action: String,
    },
    Reflection {
        step: u32,
        reflection: ReflectionResult,
    },
    Critique {
        step: u32,
        text: String,
    },
    Malformed {
        step: u32,
        role: String,
        reason: String,
    },
}

impl TraceEvent {
    /// Whether the event belongs in the persisted trace file.
    pub fn is_persisted(&self) -> bool {
        matches!(
            self,
            TraceEvent::Header(_) | TraceEvent::Step(_) | TraceEvent::Footer(_)
        )
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace events always serialize")
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: TraceFooter,
}

impl EpisodeTrace {
    pub fn events(&self) -> Vec<TraceEvent> {
        let mut out = vec![TraceEvent::Header(self.header.clone())];
        out.extend(self.steps.iter().cloned().map(TraceEvent::Step));
        out.push(TraceEvent::Footer(self.footer.clone()));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.events() {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    /// Rebuilds a trace from persisted events, skipping live-only ones.
    pub fn from_events(events: impl IntoIterator<Item = TraceEvent>) -> Result<Self, TraceError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        for e in events {
            match e {
                TraceEvent::Header(h) if header.is_none() => header = Some(h),
                TraceEvent::Header(_) => return Err(TraceError::Shape("second header".into())),
                TraceEvent::Step(s) => {
                    if header.is_none() || footer.is_some() {
                        return Err(TraceError::Shape("step outside header/footer".into()));
                    }
                    steps.push(s)
                }
                TraceEvent::Footer(f) => footer = Some(f),
                _ => {}
            }
        }
        let header = header.ok_or_else(|| TraceError::Shape("missing header".into()))?;
        if header.schema != TRACE_SCHEMA {
            return Err(TraceError::Shape(format!(
                "unsupported schema `{}`",
                header.schema
            )));
        }
        let footer = footer.ok_or_else(|| TraceError::Shape("missing footer".into()))?;
        Ok(Self {
            header,
            steps,
            footer,
        })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TraceError> {
        Self::read(text.as_bytes())
    }

    pub fn read(reader: impl BufRead) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(&line).map_err(|source| TraceError::Json {
                line: i + 1,
                source,
            })?;
            events.push(e);
        }
        Self::from_events(events)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn verdict(&self) -> Verdict {
        self.footer.verdict
    }

    /// Every action record in step order.
    pub fn records(&self) -> impl Iterator<Item = &ActionRecord> {
        self.steps.iter().flat_map(|s| s.actions.iter())
    }
}
