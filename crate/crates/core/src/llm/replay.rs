//! Positional replay of recorded model responses.
//!
//! Fixture files are plain UTF-8 text. Each response starts with a heading
//! line and runs until the next heading:
//!
//! ```text
//! ### decision
//! ACTION Stop | outcome=achieved
//! ### reflection 0 hash=3f1a...
//! Y
//! The errand is finished.
//! ```
//!
//! The heading names the role, optionally an explicit per-role index (default:
//! one past the previous entry for that role) and optionally the request hash
//! the response was recorded against. Text before the first heading is
//! ignored and can hold comments.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, RoleTag};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureEntry {
    pub text: String,
    pub hash: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fixture {
    entries: BTreeMap<(RoleTag, usize), FixtureEntry>,
}

/// A section being read: heading line, role, index, hash and body lines.
type Section<'a> = (usize, RoleTag, usize, Option<String>, Vec<&'a str>);

impl Fixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut fixture = Fixture::default();
        let mut current: Option<Section> = None;
        let mut next_index: BTreeMap<RoleTag, usize> = BTreeMap::new();

        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let Some(heading) = line.strip_prefix("### ") else {
                if let Some((.., body)) = current.as_mut() {
                    body.push(line);
                }
                continue;
            };
            if let Some(done) = current.take() {
                fixture.close(done)?;
            }
            let mut parts = heading.split_whitespace();
            let role = parts
                .next()
                .and_then(RoleTag::parse)
                .ok_or_else(|| FixtureError::Syntax {
                    line: line_no,
                    message: format!("unknown role in heading `{heading}`"),
                })?;
            let mut index = None;
            let mut hash = None;
            for part in parts {
                if let Some(h) = part.strip_prefix("hash=") {
                    hash = Some(h.to_string());
                } else if let Ok(i) = part.parse::<usize>() {
                    index = Some(i);
                } else {
                    return Err(FixtureError::Syntax {
                        line: line_no,
                        message: format!("unexpected `{part}` in heading"),
                    });
                }
            }
            let slot = next_index.entry(role).or_insert(0);
            let index = index.unwrap_or(*slot);
            *slot = index + 1;
            current = Some((line_no, role, index, hash, Vec::new()));
        }
        if let Some(done) = current.take() {
            fixture.close(done)?;
        }
        Ok(fixture)
    }

    fn close(
        &mut self,
        (line, role, index, hash, body): (usize, RoleTag, usize, Option<String>, Vec<&str>),
    ) -> Result<(), FixtureError> {
        let text = body.join("\n").trim().to_string();
        if text.is_empty() {
            return Err(FixtureError::Syntax {
                line,
                message: format!("empty response for {role} #{index}"),
            });
        }
        if self
            .entries
            .insert((role, index), FixtureEntry { text, hash })
            .is_some()
        {
            return Err(FixtureError::Syntax {
                line,
                message: format!("duplicate response for {role} #{index}"),
            });
        }
        Ok(())
    }

    /// Appends a response after the last one recorded for `role`.
    pub fn push(&mut self, role: RoleTag, text: impl Into<String>, hash: Option<String>) {
        let index = self
            .entries
            .range((role, 0)..=(role, usize::MAX))
            .next_back()
            .map(|((_, i), _)| i + 1)
            .unwrap_or(0);
        self.entries.insert(
            (role, index),
            FixtureEntry {
                text: text.into(),
                hash,
            },
        );
    }

    pub fn get(&self, role: RoleTag, index: usize) -> Option<&FixtureEntry> {
        self.entries.get(&(role, index))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, role: RoleTag) -> usize {
        self.entries.keys().filter(|(r, _)| *r == role).count()
    }

    /// Serializes with explicit indices, grouped by role.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for ((role, index), entry) in &self.entries {
            let _ = write!(out, "### {role} {index}");
            if let Some(h) = &entry.hash {
                let _ = write!(out, " hash={h}");
            }
            out.push('\n');
            out.push_str(entry.text.trim());
            out.push_str("\n\n");
        }
        out
    }
}

/// Serves fixture responses in per-role order. Confined to one episode: the
/// counters advance with every call.
pub struct ReplayBackend {
    fixture: Fixture,
    strict: bool,
    counters: Mutex<BTreeMap<RoleTag, usize>>,
    transcript: Mutex<Vec<(RoleTag, usize, String)>>,
}

impl ReplayBackend {
    pub fn new(fixture: Fixture) -> Self {
        Self {
            fixture,
            strict: false,
            counters: Mutex::new(BTreeMap::new()),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Also require that requests hash to the value stored with a response,
    /// when one is stored.
    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        Fixture::load(path).map(Self::new)
    }

    /// Every served response as (role, index, text), in call order.
    pub fn transcript(&self) -> Vec<(RoleTag, usize, String)> {
        self.transcript.lock().expect("transcript poisoned").clone()
    }

    /// Calls served so far for `role`.
    pub fn served(&self, role: RoleTag) -> usize {
        self.counters
            .lock()
            .expect("counters poisoned")
            .get(&role)
            .copied()
            .unwrap_or(0)
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let role = request.role_tag;
        let index = {
            let mut counters = self.counters.lock().expect("counters poisoned");
            let slot = counters.entry(role).or_insert(0);
            let index = *slot;
            *slot += 1;
            index
        };
        let entry = self
            .fixture
            .get(role, index)
            .ok_or(LlmError::FixtureMiss { role, index })?;
        if self.strict {
            if let Some(expected) = &entry.hash {
                let actual = request.hash();
                if &actual != expected {
                    return Err(LlmError::HashMismatch {
                        role,
                        index,
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
        }
        self.transcript
            .lock()
            .expect("transcript poisoned")
            .push((role, index, entry.text.clone()));
        Ok(ChatResponse {
            text: entry.text.clone(),
            backend_id: self.id().to_string(),
            latency: started.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
comment before the first heading
### decision
ACTION Stop | outcome=achieved
### reflection
Y
Done.

### decision
ACTION Wait | content=anyone?
";

    fn req(role: RoleTag) -> ChatRequest {
        ChatRequest::new(role, "system").with("memory", "m")
    }

    #[test]
    fn serves_in_per_role_order() {
        let b = ReplayBackend::new(Fixture::parse(SAMPLE).unwrap());
        assert_eq!(
            b.complete(&req(RoleTag::Decision)).unwrap().text,
            "ACTION Stop | outcome=achieved"
        );
        assert_eq!(
            b.complete(&req(RoleTag::Reflection)).unwrap().text,
            "Y\nDone."
        );
        assert_eq!(
            b.complete(&req(RoleTag::Decision)).unwrap().text,
            "ACTION Wait | content=anyone?"
        );
    }

    #[test]
    fn exhausted_fixture_names_index() {
        let b = ReplayBackend::new(Fixture::parse(SAMPLE).unwrap());
        b.complete(&req(RoleTag::Reflection)).unwrap();
        let err = b.complete(&req(RoleTag::Reflection)).unwrap_err();
        assert_eq!(
            err,
            LlmError::FixtureMiss {
                role: RoleTag::Reflection,
                index: 1
            }
        );
        assert!(err.to_string().contains("reflection #1"));
    }

    #[test]
    fn replaying_twice_gives_identical_transcripts() {
        let fixture = Fixture::parse(SAMPLE).unwrap();
        let run = || {
            let b = ReplayBackend::new(fixture.clone());
            for role in [RoleTag::Decision, RoleTag::Reflection, RoleTag::Decision] {
                b.complete(&req(role)).unwrap();
            }
            b.transcript()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn render_round_trips() {
        let fixture = Fixture::parse(SAMPLE).unwrap();
        assert_eq!(Fixture::parse(&fixture.render()).unwrap(), fixture);
        assert_eq!(fixture.count(RoleTag::Decision), 2);
    }

    #[test]
    fn strict_mode_checks_hashes() {
        let r = req(RoleTag::Decision);
        let text = format!("### decision hash={}\nACTION Stop | outcome=achieved\n", r.hash());
        let b = ReplayBackend::new(Fixture::parse(&text).unwrap()).strict();
        assert!(b.complete(&r).is_ok());

        let b = ReplayBackend::new(Fixture::parse(&text).unwrap()).strict();
        let other = ChatRequest::new(RoleTag::Decision, "changed");
        assert!(matches!(
            b.complete(&other),
            Err(LlmError::HashMismatch { .. })
        ));
    }

    #[test]
    fn syntax_errors() {
        assert!(Fixture::parse("### oracle\nx\n").is_err());
        assert!(Fixture::parse("### decision\n\n### decision\nx\n").is_err());
        assert!(Fixture::parse("### decision 0\nx\n### decision 0\ny\n").is_err());
    }
}
