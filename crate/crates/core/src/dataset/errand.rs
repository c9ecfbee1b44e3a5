//! The five errand families and their fixed instruction phrasings.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Borrow,
    Print,
    Deliver,
    Sign,
    Notify,
}

impl Family {
    /// Flexible families can be completed by someone other than the named
    /// person; strict ones cannot.
    pub fn is_flexible(self) -> bool {
        matches!(self, Family::Borrow | Family::Print)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Borrow => "borrow",
            Family::Print => "print",
            Family::Deliver => "deliver",
            Family::Sign => "sign",
            Family::Notify => "notify",
        }
    }
}

/// Item kind whose owners can print documents.
pub const PRINTER_KIND: &str = "desk printer";

/// A parsed errand. Names are display names as written in the instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Errand {
    Borrow { kind: String, from: String },
    Print { from: String },
    Deliver { item: String, to: String },
    Sign { signer: String },
    Notify { to: String, message: String },
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

impl Errand {
    pub fn family(&self) -> Family {
        match self {
            Errand::Borrow { .. } => Family::Borrow,
            Errand::Print { .. } => Family::Print,
            Errand::Deliver { .. } => Family::Deliver,
            Errand::Sign { .. } => Family::Sign,
            Errand::Notify { .. } => Family::Notify,
        }
    }

    /// The person the instruction names.
    pub fn named_person(&self) -> &str {
        match self {
            Errand::Borrow { from, .. } | Errand::Print { from } => from,
            Errand::Deliver { to, .. } | Errand::Notify { to, .. } => to,
            Errand::Sign { signer } => signer,
        }
    }

    /// The item kind a helper must own, for flexible families.
    pub fn needed_kind(&self) -> Option<&str> {
        match self {
            Errand::Borrow { kind, .. } => Some(kind),
            Errand::Print { .. } => Some(PRINTER_KIND),
            _ => None,
        }
    }

    pub fn instruction(&self) -> String {
        match self {
            Errand::Borrow { kind, from } => format!(
                "Please borrow {} {kind} from {from} and bring it to me.",
                article(kind)
            ),
            Errand::Print { from } => {
                format!("Please ask {from} to print my file and bring the printout to me.")
            }
            Errand::Deliver { item, to } => format!("Please deliver my {item} to {to}."),
            Errand::Sign { signer } => format!(
                "Please forward my document to {signer} for a signature and send it back to me."
            ),
            Errand::Notify { to, message } => {
                format!("Please go to {to}'s desk and tell them in person that {message}.")
            }
        }
    }

    /// Inverse of [`Errand::instruction`].
    pub fn parse(text: &str) -> Option<Errand> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix("Please borrow ") {
            let rest = rest.strip_suffix(" and bring it to me.")?;
            let rest = rest
                .strip_prefix("a ")
                .or_else(|| rest.strip_prefix("an "))?;
            let (kind, from) = rest.rsplit_once(" from ")?;
            return Some(Errand::Borrow {
                kind: kind.to_string(),
                from: from.to_string(),
            });
        }
        if let Some(rest) = t.strip_prefix("Please ask ") {
            let from = rest.strip_suffix(" to print my file and bring the printout to me.")?;
            return Some(Errand::Print {
                from: from.to_string(),
            });
        }
        if let Some(rest) = t.strip_prefix("Please deliver my ") {
            let (item, to) = rest.strip_suffix('.')?.rsplit_once(" to ")?;
            return Some(Errand::Deliver {
                item: item.to_string(),
                to: to.to_string(),
            });
        }
        if let Some(rest) = t.strip_prefix("Please forward my document to ") {
            let signer =
                rest.strip_suffix(" for a signature and send it back to me.")?;
            return Some(Errand::Sign {
                signer: signer.to_string(),
            });
        }
        if let Some(rest) = t.strip_prefix("Please go to ") {
            let (to, rest) = rest.split_once("'s desk and tell them in person that ")?;
            return Some(Errand::Notify {
                to: to.to_string(),
                message: rest.strip_suffix('.')?.to_string(),
            });
        }
        None
    }
}
