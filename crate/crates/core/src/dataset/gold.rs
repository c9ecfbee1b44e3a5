//! Constraint-based gold annotations and their expansion against ground
//! truth.
//!
//! A gold spec names parties symbolically (the requester, the person the
//! instruction names, whoever ends up helping, ...). Resolving it under an
//! availability map gives every concrete interaction set that would count as
//! doing the errand properly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionKind, StopOutcome};
use crate::memory::EntityId;
use crate::scenario::Scenario;

use super::errand::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::L3];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
        }
    }
}

/// A symbolic participant in a gold template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Requester,
    /// The person the instruction names.
    Named,
    /// Whoever actually provides the item or service.
    Helper,
    /// Every other owner the robot knows about; expands to one interaction
    /// each.
    KnownAlternatives,
    /// The robot's chat group.
    Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionTemplate {
    pub kind: ActionKind,
    pub target: Party,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Party>,
    /// Substrings the message text must contain, case-insensitively.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub order_group: u32,
    /// Search tiers the template applies to; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tiers: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpec {
    pub family: Family,
    pub requester: EntityId,
    pub named: EntityId,
    /// Item kind a helper must own, for flexible families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub required: Vec<InteractionTemplate>,
    /// Set on unachievable entries: claiming this outcome is wrong.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbidden_outcome: Option<StopOutcome>,
}

/// One interaction the robot is expected to perform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: ActionKind,
    /// Person id or group id; empty for `Stop`.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EntityId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub order_group: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<StopOutcome>,
}

impl Interaction {
    pub fn stop_unachievable() -> Self {
        Self {
            kind: ActionKind::Stop,
            target: String::new(),
            source: None,
            contains: Vec::new(),
            order_group: 0,
            outcome: Some(StopOutcome::Unachievable),
        }
    }
}

/// A complete way of doing the errand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helper: Option<EntityId>,
    pub interactions: Vec<Interaction>,
}

impl AdmissibleSet {
    pub fn is_stop_only(&self) -> bool {
        self.interactions.len() == 1 && self.interactions[0].kind == ActionKind::Stop
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GoldError {
    #[error("unknown item kind `{0}`")]
    UnknownKind(String),
    #[error("unknown person `{0}`")]
    UnknownPerson(String),
    #[error("scenario has no chat group")]
    NoGroup,
    #[error("the base instruction cannot be completed with everyone available")]
    BaseUnresolvable,
}

/// How far the robot has to search for help, and who can give it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assessment {
    pub level: Level,
    pub achievable: bool,
    /// 1 = named person, 2 = a known alternative, 3 = someone found through
    /// the group. `None` when unachievable.
    pub tier: Option<u8>,
    pub helpers: Vec<EntityId>,
    /// Owners the robot knows about other than the named person.
    pub known_alternatives: Vec<EntityId>,
}

fn available(avail: &BTreeMap<EntityId, bool>, p: &EntityId) -> bool {
    avail.get(p).copied().unwrap_or(true)
}

/// Level and achievability from the gold spec, the entry's availability map
/// and scenario truth. Missing people in `availability` count as available.
pub fn assess(
    gold: &GoldSpec,
    availability: &BTreeMap<EntityId, bool>,
    scenario: &Scenario,
) -> Result<Assessment, GoldError> {
    for p in [&gold.requester, &gold.named] {
        if !scenario.people.iter().any(|s| &s.id == p) {
            return Err(GoldError::UnknownPerson(p.to_string()));
        }
    }
    let named_ok = available(availability, &gold.named);
    let Some(kind) = gold.kind.as_deref().filter(|_| gold.family.is_flexible()) else {
        return Ok(if named_ok {
            Assessment {
                level: Level::L1,
                achievable: true,
                tier: Some(1),
                helpers: vec![gold.named.clone()],
                known_alternatives: Vec::new(),
            }
        } else {
            Assessment {
                level: Level::L3,
                achievable: false,
                tier: None,
                helpers: Vec::new(),
                known_alternatives: Vec::new(),
            }
        });
    };
    if !scenario.item_kinds().iter().any(|k| k.eq_ignore_ascii_case(kind)) {
        return Err(GoldError::UnknownKind(kind.to_string()));
    }
    let known: Vec<EntityId> = scenario
        .known_owners_of_kind(kind)
        .into_iter()
        .filter(|p| p != &gold.requester && p != &gold.named)
        .collect();
    let known_all = scenario.known_owners_of_kind(kind);
    let unknown: Vec<EntityId> = scenario
        .owners_of_kind(kind)
        .into_iter()
        .filter(|p| p != &gold.requester && !known_all.contains(p))
        .collect();
    let pick = |set: &[EntityId]| -> Vec<EntityId> {
        set.iter()
            .filter(|p| available(availability, p))
            .cloned()
            .collect()
    };
    let (level, tier, helpers) = if named_ok && known_all.contains(&gold.named) {
        (Level::L1, Some(1), vec![gold.named.clone()])
    } else if !pick(&known).is_empty() {
        (Level::L2, Some(2), pick(&known))
    } else if !pick(&unknown).is_empty() {
        (Level::L3, Some(3), pick(&unknown))
    } else {
        (Level::L3, None, Vec::new())
    };
    Ok(Assessment {
        level,
        achievable: tier.is_some(),
        tier,
        helpers,
        known_alternatives: known,
    })
}

/// Expands the gold spec into every admissible interaction set. An
/// unachievable entry has exactly one: declaring it unachievable.
pub fn resolve_gold(
    gold: &GoldSpec,
    availability: &BTreeMap<EntityId, bool>,
    scenario: &Scenario,
) -> Result<Vec<AdmissibleSet>, GoldError> {
    let a = assess(gold, availability, scenario)?;
    let Some(tier) = a.tier else {
        return Ok(vec![AdmissibleSet {
            helper: None,
            interactions: vec![Interaction::stop_unachievable()],
        }]);
    };
    let group = || -> Result<String, GoldError> {
        scenario
            .groups
            .first()
            .map(|g| g.id.clone())
            .ok_or(GoldError::NoGroup)
    };
    let mut out = Vec::new();
    for helper in &a.helpers {
        let party = |p: Party| -> Result<Vec<String>, GoldError> {
            Ok(match p {
                Party::Requester => vec![gold.requester.to_string()],
                Party::Named => vec![gold.named.to_string()],
                Party::Helper => vec![helper.to_string()],
                Party::KnownAlternatives => {
                    a.known_alternatives.iter().map(|p| p.to_string()).collect()
                }
                Party::Group => vec![group()?],
            })
        };
        let mut interactions = Vec::new();
        for t in &gold.required {
            if !t.tiers.is_empty() && !t.tiers.contains(&tier) {
                continue;
            }
            let source = match t.source {
                Some(p) => party(p)?.into_iter().next().map(EntityId::new),
                None => None,
            };
            for target in party(t.target)? {
                interactions.push(Interaction {
                    kind: t.kind,
                    target,
                    source: source.clone(),
                    contains: t.contains.clone(),
                    order_group: t.order_group,
                    outcome: None,
                });
            }
        }
        interactions.sort_by_key(|i| i.order_group);
        out.push(AdmissibleSet {
            helper: Some(helper.clone()),
            interactions,
        });
    }
    Ok(out)
}

fn template(kind: ActionKind, target: Party, group: u32) -> InteractionTemplate {
    InteractionTemplate {
        kind,
        target,
        source: None,
        contains: Vec::new(),
        order_group: group,
        tiers: Vec::new(),
    }
}

fn handoff(to: Party, group: u32, announce: bool) -> Vec<InteractionTemplate> {
    let mut out = Vec::new();
    if announce {
        out.push(template(ActionKind::Inform, to, group));
    }
    for kind in [ActionKind::Move, ActionKind::SendQRCode, ActionKind::WaitInPlace] {
        out.push(template(kind, to, group));
    }
    out
}

fn probes(keyword: &str) -> Vec<InteractionTemplate> {
    let inquire = |target, tiers: Vec<u8>| InteractionTemplate {
        contains: vec![keyword.to_string()],
        tiers,
        ..template(ActionKind::Inquire, target, 0)
    };
    vec![
        inquire(Party::Named, vec![]),
        inquire(Party::Helper, vec![2]),
        inquire(Party::KnownAlternatives, vec![3]),
        inquire(Party::Group, vec![3]),
    ]
}

/// The gold template list for a family. `keyword` is the item kind for
/// borrowing, the item name for deliveries and the message keyword for
/// notifications.
pub fn templates_for(family: Family, keyword: &str) -> Vec<InteractionTemplate> {
    match family {
        Family::Borrow => {
            let mut t = probes(keyword);
            t.extend(handoff(Party::Helper, 1, true));
            t.extend(handoff(Party::Requester, 2, true));
            t
        }
        Family::Print => {
            let mut t = probes("print");
            t.push(InteractionTemplate {
                source: Some(Party::Requester),
                ..template(ActionKind::Forward, Party::Helper, 1)
            });
            t.extend(handoff(Party::Helper, 2, true));
            t.extend(handoff(Party::Requester, 3, true));
            t
        }
        Family::Deliver => {
            let mut t = vec![InteractionTemplate {
                contains: vec![keyword.to_string()],
                ..template(ActionKind::Inform, Party::Named, 0)
            }];
            t.extend(handoff(Party::Requester, 1, true));
            t.extend(handoff(Party::Named, 2, false));
            t
        }
        Family::Sign => vec![
            InteractionTemplate {
                source: Some(Party::Requester),
                ..template(ActionKind::Forward, Party::Named, 0)
            },
            InteractionTemplate {
                contains: vec!["sign".into()],
                ..template(ActionKind::Inquire, Party::Named, 1)
            },
            InteractionTemplate {
                source: Some(Party::Named),
                ..template(ActionKind::Forward, Party::Requester, 2)
            },
        ],
        Family::Notify => vec![
            InteractionTemplate {
                contains: vec![keyword.to_string()],
                ..template(ActionKind::Inform, Party::Named, 0)
            },
            template(ActionKind::Move, Party::Named, 1),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(family: Family, requester: &str, named: &str, kind: Option<&str>, kw: &str) -> GoldSpec {
        GoldSpec {
            family,
            requester: requester.into(),
            named: named.into(),
            kind: kind.map(str::to_string),
            required: templates_for(family, kw),
            forbidden_outcome: None,
        }
    }

    fn off(people: &[&str]) -> BTreeMap<EntityId, bool> {
        people.iter().map(|p| (EntityId::new(*p), false)).collect()
    }

    #[test]
    fn family_totals() {
        let sc = Scenario::bundled();
        let cases = [
            (gold(Family::Print, "h-lee", "h-mao", Some("desk printer"), ""), 10),
            (gold(Family::Deliver, "h-lee", "h-mao", None, "notebook"), 8),
            (gold(Family::Sign, "h-lee", "h-wu", None, ""), 3),
            (gold(Family::Notify, "h-lee", "h-wu", None, "meeting"), 2),
            (gold(Family::Borrow, "h-lee", "h-mao", Some("pen"), "pen"), 9),
        ];
        for (g, n) in cases {
            let sets = resolve_gold(&g, &BTreeMap::new(), &sc).unwrap();
            assert_eq!(sets.len(), 1, "{:?}", g.family);
            assert_eq!(sets[0].interactions.len(), n, "{:?}", g.family);
        }
    }

    #[test]
    fn named_printer_owner_unavailable_falls_to_wu() {
        let sc = Scenario::bundled();
        let g = gold(Family::Print, "h-lee", "h-mao", Some("desk printer"), "");
        let a = assess(&g, &off(&["h-mao"]), &sc).unwrap();
        assert_eq!((a.level, a.achievable), (Level::L2, true));
        assert_eq!(a.helpers, vec![EntityId::new("h-wu")]);
    }

    #[test]
    fn only_group_members_left_is_level_three() {
        let sc = Scenario::bundled();
        let g = gold(Family::Print, "h-lee", "h-mao", Some("desk printer"), "");
        let a = assess(&g, &off(&["h-mao", "h-wu"]), &sc).unwrap();
        assert_eq!((a.level, a.achievable), (Level::L3, true));
        let sets = resolve_gold(&g, &off(&["h-mao", "h-wu"]), &sc).unwrap();
        // Huang and Zhang own desk printers nobody told the robot about
        assert_eq!(sets.len(), 2);
        // probes: Mao, Wu (known alternative), group
        assert_eq!(
            sets[0].interactions.iter().filter(|i| i.order_group == 0).count(),
            3
        );
    }

    #[test]
    fn nobody_with_a_pen_is_unachievable() {
        let sc = Scenario::bundled();
        let g = gold(Family::Borrow, "h-lee", "h-mao", Some("pen"), "pen");
        let everyone = off(&["h-mao", "h-wu", "h-sun", "h-guo", "h-zhao"]);
        let a = assess(&g, &everyone, &sc).unwrap();
        assert_eq!((a.level, a.achievable), (Level::L3, false));
        let sets = resolve_gold(&g, &everyone, &sc).unwrap();
        assert_eq!(sets.len(), 1);
        assert!(sets[0].is_stop_only());
    }

    #[test]
    fn three_available_pen_owners_give_three_sets() {
        // Lee asks Mao for a pen; Mao is away, so Wu and Sun are the known
        // alternatives. Checked by listing pen owners in the scenario file.
        let sc = Scenario::bundled();
        let g = gold(Family::Borrow, "h-lee", "h-mao", Some("pen"), "pen");
        let sets = resolve_gold(&g, &off(&["h-mao"]), &sc).unwrap();
        let helpers: Vec<_> = sets.iter().map(|s| s.helper.clone().unwrap()).collect();
        assert_eq!(helpers, vec![EntityId::new("h-sun"), EntityId::new("h-wu")]);
    }

    #[test]
    fn strict_family_with_target_away_is_unachievable() {
        let sc = Scenario::bundled();
        let g = gold(Family::Deliver, "h-lee", "h-mao", None, "notebook");
        let a = assess(&g, &off(&["h-mao"]), &sc).unwrap();
        assert!(!a.achievable);
        assert_eq!(a.level, Level::L3);
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let sc = Scenario::bundled();
        let g = gold(Family::Borrow, "h-lee", "h-mao", Some("laser"), "laser");
        assert_eq!(
            assess(&g, &BTreeMap::new(), &sc).unwrap_err(),
            GoldError::UnknownKind("laser".into())
        );
    }
}
