//! Builds the dataset from authored base instructions by marking people
//! unavailable.
//!
//! Variant fan-out per base:
//!
//! | bases                         | L1 | L2 | L3 ok | L3 unachievable |
//! |-------------------------------|----|----|-------|-----------------|
//! | flexible 0..7                 |  1 |  4 |   2   |        0        |
//! | flexible 7                    |  1 |  5 |   1   |        0        |
//! | flexible 8..14                |  2 |  4 |   1   |        0        |
//! | flexible 14..18               |  1 |  4 |   1   |        1        |
//! | strict 0..6                   |  5 |  0 |   0   |        2        |
//! | strict 6..12                  |  6 |  0 |   0   |        1        |
//!
//! The L1 column includes the base entry itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::EntityId;
use crate::scenario::Scenario;

use super::errand::{Errand, PRINTER_KIND};
use super::gold::{assess, templates_for, GoldError, GoldSpec, Level};
use super::{DatasetFile, TaskEntry, DATASET_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub id: String,
    pub requester: EntityId,
    pub errand: Errand,
    /// Word a notification must carry; defaults to the item for deliveries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<String>,
}

#[derive(Debug, Deserialize)]
struct BasesFile {
    version: u32,
    bases: Vec<BaseSpec>,
}

pub fn parse_bases(text: &str) -> Result<Vec<BaseSpec>, GenerateError> {
    let file: BasesFile =
        serde_json::from_str(text).map_err(|e| GenerateError::Schema(e.to_string()))?;
    if file.version != DATASET_VERSION {
        return Err(GenerateError::Schema(format!(
            "unsupported version {}",
            file.version
        )));
    }
    Ok(file.bases)
}

/// How many variants of each kind to derive from one base.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VariantQuota {
    pub l1: usize,
    pub l2: usize,
    pub l3_achievable: usize,
    pub l3_unachievable: usize,
}

impl VariantQuota {
    pub fn total(&self) -> usize {
        self.l1 + self.l2 + self.l3_achievable + self.l3_unachievable
    }

    /// Fan-out for the `index`-th flexible or strict base, six variants each.
    pub fn for_base(flexible: bool, index: usize) -> Self {
        if flexible {
            let l3_achievable = if index < 7 { 2 } else { 1 };
            let l3_unachievable = usize::from(index >= 14);
            let l2 = if index == 7 { 5 } else { 4 };
            VariantQuota {
                l1: 6 - l3_achievable - l3_unachievable - l2,
                l2,
                l3_achievable,
                l3_unachievable,
            }
        } else {
            let l3_unachievable = if index < 6 { 2 } else { 1 };
            VariantQuota {
                l1: 6 - l3_unachievable,
                l3_unachievable,
                ..Default::default()
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("bases: {0}")]
    Schema(String),
    #[error("base {base}: unknown person `{name}`")]
    UnknownPerson { base: String, name: String },
    #[error("base {base}: {source}")]
    Gold { base: String, source: GoldError },
    #[error("base {base}: variants must start from an all-available base")]
    BaseNotAllAvailable { base: String },
    #[error("base {base}: only {found} distinct {level} variants, {wanted} wanted")]
    Quota {
        base: String,
        level: String,
        found: usize,
        wanted: usize,
    },
}

/// Turns a base spec into its base entry (everyone available, level 1).
pub fn base_entry(base: &BaseSpec, scenario: &Scenario) -> Result<TaskEntry, GenerateError> {
    let named_name = base.errand.named_person();
    let named = scenario
        .person(named_name)
        .ok_or_else(|| GenerateError::UnknownPerson {
            base: base.id.clone(),
            name: named_name.to_string(),
        })?
        .id
        .clone();
    if scenario.person(base.requester.as_str()).is_none() {
        return Err(GenerateError::UnknownPerson {
            base: base.id.clone(),
            name: base.requester.to_string(),
        });
    }
    let (kind, keyword) = match &base.errand {
        Errand::Borrow { kind, .. } => (Some(kind.clone()), kind.clone()),
        Errand::Print { .. } => (Some(PRINTER_KIND.to_string()), "print".to_string()),
        Errand::Deliver { item, .. } => (None, item.clone()),
        Errand::Sign { .. } => (None, "sign".to_string()),
        Errand::Notify { message, .. } => (
            None,
            base.keyword
                .clone()
                .unwrap_or_else(|| message.split_whitespace().last().unwrap_or("").to_string()),
        ),
    };
    let family = base.errand.family();
    let gold = GoldSpec {
        family,
        requester: base.requester.clone(),
        named,
        kind,
        required: templates_for(family, &keyword),
        forbidden_outcome: None,
    };
    let availability = BTreeMap::new();
    let a = assess(&gold, &availability, scenario).map_err(|source| GenerateError::Gold {
        base: base.id.clone(),
        source,
    })?;
    if a.level != Level::L1 || !a.achievable {
        return Err(GenerateError::Gold {
            base: base.id.clone(),
            source: GoldError::BaseUnresolvable,
        });
    }
    Ok(TaskEntry {
        id: base.id.clone(),
        base_id: base.id.clone(),
        requester: base.requester.clone(),
        instruction: base.errand.instruction(),
        availability,
        level: Level::L1,
        achievable: true,
        gold,
    })
}

/// Subsets of `items` other than the full set, smallest first.
fn proper_subsets(items: &[EntityId]) -> Vec<Vec<EntityId>> {
    let n = items.len();
    let mut masks: Vec<u32> = (0..(1u32 << n)).filter(|m| *m != (1u32 << n) - 1).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks
        .into_iter()
        .map(|m| {
            (0..n)
                .filter(|i| m & (1 << i) != 0)
                .map(|i| items[i].clone())
                .collect()
        })
        .collect()
}

fn with_each(sets: Vec<Vec<EntityId>>, extras: &[EntityId]) -> Vec<Vec<EntityId>> {
    let mut out = sets.clone();
    for e in extras {
        for s in &sets {
            let mut s = s.clone();
            s.push(e.clone());
            out.push(s);
        }
    }
    out
}

/// Derives availability variants of `base` meeting `quota`. Instruction
/// text is never touched.
pub fn generate_variants(
    base: &TaskEntry,
    scenario: &Scenario,
    quota: VariantQuota,
) -> Result<Vec<TaskEntry>, GenerateError> {
    if base.availability.values().any(|v| !v) {
        return Err(GenerateError::BaseNotAllAvailable {
            base: base.id.clone(),
        });
    }
    let gold = &base.gold;
    let r = &gold.requester;
    let p = &gold.named;
    let (known, unknown, owners): (Vec<EntityId>, Vec<EntityId>, Vec<EntityId>) = match &gold.kind
    {
        Some(kind) if gold.family.is_flexible() => {
            let known_all = scenario.known_owners_of_kind(kind);
            let all = scenario.owners_of_kind(kind);
            (
                known_all.iter().filter(|o| *o != r && *o != p).cloned().collect(),
                all.iter()
                    .filter(|o| *o != r && !known_all.contains(o))
                    .cloned()
                    .collect(),
                all,
            )
        }
        _ => (Vec::new(), Vec::new(), Vec::new()),
    };
    let mut bystanders: Vec<EntityId> = scenario
        .people
        .iter()
        .map(|s| s.id.clone())
        .filter(|id| id != r && id != p && !owners.contains(id))
        .collect();
    let offset = base.id.bytes().map(usize::from).sum::<usize>() % bystanders.len().max(1);
    bystanders.rotate_left(offset);

    let singles: Vec<Vec<EntityId>> = bystanders.iter().map(|b| vec![b.clone()]).collect();
    let pairs: Vec<Vec<EntityId>> = bystanders
        .iter()
        .zip(bystanders.iter().skip(1))
        .map(|(a, b)| vec![a.clone(), b.clone()])
        .collect();
    let prefix = |extra: &[EntityId], sets: Vec<Vec<EntityId>>| -> Vec<Vec<EntityId>> {
        sets.into_iter()
            .map(|s| extra.iter().cloned().chain(s).collect())
            .collect()
    };
    let mut p_known = vec![p.clone()];
    p_known.extend(known.iter().cloned());
    let mut everyone = p_known.clone();
    everyone.extend(unknown.iter().cloned());

    let plan: [(Level, bool, usize, Vec<Vec<EntityId>>); 4] = [
        (
            Level::L1,
            true,
            quota.l1,
            singles.iter().chain(pairs.iter()).cloned().collect(),
        ),
        (
            Level::L2,
            true,
            quota.l2,
            prefix(
                std::slice::from_ref(p),
                with_each(proper_subsets(&known), &bystanders),
            ),
        ),
        (
            Level::L3,
            true,
            quota.l3_achievable,
            prefix(&p_known, with_each(proper_subsets(&unknown), &bystanders)),
        ),
        (
            Level::L3,
            false,
            quota.l3_unachievable,
            prefix(&everyone, std::iter::once(Vec::new()).chain(singles.clone()).collect()),
        ),
    ];

    let mut seen: BTreeSet<Vec<EntityId>> = BTreeSet::new();
    let mut out = Vec::new();
    for (level, achievable, wanted, candidates) in plan {
        let mut found = 0;
        for mut set in candidates {
            if found == wanted {
                break;
            }
            set.sort();
            set.dedup();
            if set.is_empty() || seen.contains(&set) {
                continue;
            }
            let availability: BTreeMap<EntityId, bool> =
                set.iter().map(|p| (p.clone(), false)).collect();
            let a = assess(gold, &availability, scenario).map_err(|source| GenerateError::Gold {
                base: base.id.clone(),
                source,
            })?;
            if a.level != level || a.achievable != achievable {
                continue;
            }
            seen.insert(set);
            found += 1;
            let mut gold = gold.clone();
            if !achievable {
                gold.forbidden_outcome = Some(crate::actions::StopOutcome::Achieved);
            }
            out.push(TaskEntry {
                id: format!("{}-v{}", base.id, out.len() + 1),
                base_id: base.id.clone(),
                requester: base.requester.clone(),
                instruction: base.instruction.clone(),
                availability,
                level,
                achievable,
                gold,
            });
        }
        if found < wanted {
            return Err(GenerateError::Quota {
                base: base.id.clone(),
                level: if achievable {
                    level.as_str().to_string()
                } else {
                    format!("{} unachievable", level.as_str())
                },
                found,
                wanted,
            });
        }
    }
    Ok(out)
}

/// The whole dataset: every base followed by its variants.
pub fn generate_dataset(bases: &[BaseSpec], scenario: &Scenario) -> Result<DatasetFile, GenerateError> {
    let mut entries = Vec::new();
    let (mut flexible, mut strict) = (0, 0);
    for b in bases {
        let base = base_entry(b, scenario)?;
        let quota = if b.errand.family().is_flexible() {
            flexible += 1;
            VariantQuota::for_base(true, flexible - 1)
        } else {
            strict += 1;
            VariantQuota::for_base(false, strict - 1)
        };
        let variants = generate_variants(&base, scenario, quota)?;
        entries.push(base);
        entries.extend(variants);
    }
    Ok(DatasetFile {
        version: DATASET_VERSION,
        scenario: scenario.name.clone(),
        entries,
    })
}
