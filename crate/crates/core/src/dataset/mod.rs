//! The benchmark dataset: errand instructions, availability variants,
//! difficulty levels and gold annotations.

pub mod errand;
pub mod generate;
pub mod gold;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::EntityId;
use crate::scenario::Scenario;

pub use errand::{Errand, Family};
pub use generate::{generate_dataset, generate_variants, BaseSpec, VariantQuota};
pub use gold::{assess, resolve_gold, AdmissibleSet, GoldSpec, Interaction, Level};

pub const DATASET_VERSION: u32 = 1;

const BUNDLED: &str = include_str!("../../data/dataset.json");
const BUNDLED_BASES: &str = include_str!("../../data/bases.json");

/// Level counts the bundled dataset is built to: L1, L2, L3 achievable, L3
/// unachievable.
pub const EXPECTED_COUNTS: [usize; 4] = [90, 73, 25, 22];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: String,
    pub base_id: String,
    pub requester: EntityId,
    pub instruction: String,
    /// People marked differently from the scenario default. Base entries
    /// leave this empty.
    #[serde(default)]
    pub availability: BTreeMap<EntityId, bool>,
    pub level: Level,
    pub achievable: bool,
    pub gold: GoldSpec,
}

impl TaskEntry {
    pub fn is_base(&self) -> bool {
        self.id == self.base_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: u32,
    pub scenario: String,
    pub entries: Vec<TaskEntry>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("entry {entry}: unknown person `{person}`")]
    UnknownPerson { entry: String, person: String },
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("entry {entry}: {source}")]
    Gold {
        entry: String,
        source: gold::GoldError,
    },
    #[error("entry {entry}: stored level {stored} disagrees with recomputed {computed}")]
    LevelMismatch {
        entry: String,
        stored: String,
        computed: String,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("level counts {got:?} differ from {expected:?}")]
    CountMismatch {
        got: [usize; 4],
        expected: [usize; 4],
    },
}

/// Parses dataset JSON and checks every entry against the scenario. Strict
/// mode also rejects an empty file and counts other than
/// [`EXPECTED_COUNTS`].
pub fn parse(text: &str, scenario: &Scenario, strict: bool) -> Result<Vec<TaskEntry>, DatasetError> {
    if text.trim().is_empty() {
        return if strict {
            Err(DatasetError::Empty)
        } else {
            Ok(Vec::new())
        };
    }
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.version != DATASET_VERSION {
        return Err(DatasetError::Version(file.version));
    }
    check(&file.entries, scenario)?;
    if strict {
        if file.entries.is_empty() {
            return Err(DatasetError::Empty);
        }
        let got = stats(&file.entries).counts();
        if got != EXPECTED_COUNTS {
            return Err(DatasetError::CountMismatch {
                got,
                expected: EXPECTED_COUNTS,
            });
        }
    }
    Ok(file.entries)
}

pub fn load(path: impl AsRef<Path>, scenario: &Scenario, strict: bool) -> Result<Vec<TaskEntry>, DatasetError> {
    parse(&std::fs::read_to_string(path)?, scenario, strict)
}

/// The dataset shipped with the crate, for the bundled scenario.
pub fn bundled() -> Vec<TaskEntry> {
    parse(BUNDLED, &Scenario::bundled(), true).expect("bundled dataset is valid")
}

pub fn bundled_text() -> &'static str {
    BUNDLED
}

pub fn bundled_bases() -> Vec<BaseSpec> {
    generate::parse_bases(BUNDLED_BASES).expect("bundled bases are valid")
}

fn check(entries: &[TaskEntry], scenario: &Scenario) -> Result<(), DatasetError> {
    let mut seen = std::collections::BTreeSet::new();
    for e in entries {
        if !seen.insert(e.id.as_str()) {
            return Err(DatasetError::DuplicateId(e.id.clone()));
        }
        let people = std::iter::once(&e.requester).chain(e.availability.keys());
        for p in people {
            if !scenario.people.iter().any(|s| &s.id == p) {
                return Err(DatasetError::UnknownPerson {
                    entry: e.id.clone(),
                    person: p.to_string(),
                });
            }
        }
        let a = assess(&e.gold, &e.availability, scenario).map_err(|source| DatasetError::Gold {
            entry: e.id.clone(),
            source,
        })?;
        if a.level != e.level || a.achievable != e.achievable {
            return Err(DatasetError::LevelMismatch {
                entry: e.id.clone(),
                stored: level_label(e.level, e.achievable),
                computed: level_label(a.level, a.achievable),
            });
        }
    }
    Ok(())
}

fn level_label(level: Level, achievable: bool) -> String {
    format!(
        "{}{}",
        level.as_str(),
        if achievable { "" } else { " (unachievable)" }
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub l1: usize,
    pub l2: usize,
    pub l3_achievable: usize,
    pub l3_unachievable: usize,
    /// Level 1 or 2 entries marked unachievable. Never produced by the
    /// generator; counted so nothing goes missing from the total.
    pub other_unachievable: usize,
}

impl DatasetStats {
    pub fn counts(&self) -> [usize; 4] {
        [self.l1, self.l2, self.l3_achievable, self.l3_unachievable]
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum::<usize>() + self.other_unachievable
    }

    /// Whole-number percentages of the total, rounded half up.
    pub fn percentages(&self) -> [u32; 4] {
        let total = self.total();
        self.counts().map(|c| {
            if total == 0 {
                0
            } else {
                ((c * 200 + total) / (total * 2)) as u32
            }
        })
    }

    pub fn render(&self) -> String {
        let labels = [
            "L1 achievable",
            "L2 achievable",
            "L3 achievable",
            "L3 unachievable",
        ];
        let pct = self.percentages();
        let mut out = String::new();
        let _ = writeln!(out, "{:<18}{:>7}{:>7}", "level", "count", "share");
        for (i, label) in labels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<18}{:>7}{:>6}%",
                label,
                self.counts()[i],
                pct[i]
            );
        }
        if self.other_unachievable > 0 {
            let _ = writeln!(out, "{:<18}{:>7}", "other", self.other_unachievable);
        }
        let _ = writeln!(out, "{:<18}{:>7}", "total", self.total());
        out
    }
}

pub fn stats(entries: &[TaskEntry]) -> DatasetStats {
    let mut s = DatasetStats::default();
    for e in entries {
        match (e.level, e.achievable) {
            (Level::L1, true) => s.l1 += 1,
            (Level::L2, true) => s.l2 += 1,
            (Level::L3, true) => s.l3_achievable += 1,
            (Level::L3, false) => s.l3_unachievable += 1,
            _ => s.other_unachievable += 1,
        }
    }
    s
}
