//! The four cooperating agents (perception, planning, decision, reflection),
//! the loop that runs them over the simulator, and the single-agent
//! baselines used for comparison.

mod engine;
pub mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionRecord;
use crate::llm::{LlmError, RoleTag};
use crate::memory::IncrementalInfo;

pub use engine::{run_episode, EpisodeConfig, EpisodeHooks, EpisodeInput, NoHooks};
pub use parse::render_delta;

/// Bumped whenever a prompt file changes meaning; recorded in trace headers.
pub const PROMPT_VERSION: &str = "1";

pub mod prompts {
    pub const PERCEPTION: &str = include_str!("../../prompts/perception.txt");
    pub const PLANNING: &str = include_str!("../../prompts/planning.txt");
    pub const DECISION: &str = include_str!("../../prompts/decision.txt");
    pub const REFLECTION: &str = include_str!("../../prompts/reflection.txt");
    pub const DIRECT: &str = include_str!("../../prompts/direct.txt");
    pub const COT: &str = include_str!("../../prompts/cot.txt");
    pub const REACT: &str = include_str!("../../prompts/react.txt");
    pub const REFLEXION: &str = include_str!("../../prompts/reflexion.txt");
}

/// Hard cap on actions taken from one decision.
pub const MAX_ACTIONS_PER_STEP: usize = 3;
pub const DEFAULT_MAX_STEPS: u32 = 30;
/// Consecutive malformed steps after which an episode gives up.
pub const MAX_CONSECUTIVE_MALFORMED: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Ppdr,
    Direct,
    Cot,
    React,
    Reflexion,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Ppdr,
        StrategyKind::Direct,
        StrategyKind::Cot,
        StrategyKind::React,
        StrategyKind::Reflexion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Ppdr => "ppdr",
            StrategyKind::Direct => "direct",
            StrategyKind::Cot => "cot",
            StrategyKind::React => "react",
            StrategyKind::Reflexion => "reflexion",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyKind> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which optional stages of the four-agent loop run. Decision always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub perception: bool,
    pub planning: bool,
    pub reflection: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        perception: true,
        planning: true,
        reflection: true,
    };
    pub const NONE: AblationFlags = AblationFlags {
        perception: false,
        planning: false,
        reflection: false,
    };

    /// The full pipeline and the three single-stage ablations.
    pub fn ablations() -> [(&'static str, AblationFlags); 4] {
        [
            ("full", Self::FULL),
            (
                "no-perception",
                AblationFlags {
                    perception: false,
                    ..Self::FULL
                },
            ),
            (
                "no-planning",
                AblationFlags {
                    planning: false,
                    ..Self::FULL
                },
            ),
            (
                "no-reflection",
                AblationFlags {
                    reflection: false,
                    ..Self::FULL
                },
            ),
        ]
    }

    pub fn label(self) -> String {
        let mut off = Vec::new();
        if !self.perception {
            off.push("no-perception");
        }
        if !self.planning {
            off.push("no-planning");
        }
        if !self.reflection {
            off.push("no-reflection");
        }
        if off.is_empty() {
            "full".into()
        } else {
            off.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptionPackage {
    pub observation: String,
    pub focus: String,
    pub channel: String,
}

impl PerceptionPackage {
    pub fn focus_text(&self) -> String {
        format!(
            "OBSERVATION: {}\nFOCUS: {}\nCHANNEL: {}",
            self.observation, self.focus, self.channel
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub completed_summary: String,
    pub roadmap: Vec<String>,
}

impl Plan {
    pub fn text(&self) -> String {
        let mut out = format!("COMPLETED: {}\nROADMAP:", self.completed_summary);
        for (i, s) in self.roadmap.iter().enumerate() {
            out.push_str(&format!("\n{}. {s}", i + 1));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Judgment {
    Y,
    N,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionResult {
    pub judgment: Judgment,
    pub rationale: String,
    /// Names flagged with the `UNAVAILABLE:` sentinel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unavailable: Vec<String>,
}

/// Everything that happened in one iteration of the loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perception: Option<PerceptionPackage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
    /// Baseline reasoning text (ReAct thought, Reflexion thought).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub actions: Vec<ActionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ReflectionResult>,
    /// Reflexion's free-text self-critique.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique: Option<String>,
    pub delta: IncrementalInfo,
    /// Set when an agent's output could not be parsed even after a retry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Achieved,
    Unachievable,
    Exhausted,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Achieved => "achieved",
            Verdict::Unachievable => "unachievable",
            Verdict::Exhausted => "exhausted",
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("malformed {role} output: {reason}")]
    Malformed { role: &'static str, reason: String },
    #[error(transparent)]
    Backend(#[from] LlmError),
}

impl AgentError {
    pub(crate) fn malformed(role: RoleTag, reason: impl Into<String>) -> Self {
        AgentError::Malformed {
            role: role.as_str(),
            reason: reason.into(),
        }
    }
}
