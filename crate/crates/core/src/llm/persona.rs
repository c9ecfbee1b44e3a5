//! Simulated office contacts.
//!
//! Scripted personas answer from fixed templates so that tests can predict
//! every reply; LLM personas hand the same facts to a chat backend.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, RoleTag};
use crate::memory::{Channel, DialogueMessage, EntityId};

pub const PERSONA_PROMPT: &str = include_str!("../../prompts/persona.txt");

/// Reply marker that an LLM persona uses to stay silent.
pub const SILENCE_MARKER: &str = "[silence]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaState {
    pub person: EntityId,
    pub name: String,
    pub available: bool,
    /// Display name of the person's desk location.
    pub location: String,
    /// Item kinds this person owns, lowercase.
    pub owned: Vec<String>,
    /// Every item kind in the office, lowercase, so that requests for
    /// something the person lacks can be recognised.
    pub vocabulary: Vec<String>,
    pub style_seed: u64,
}

impl PersonaState {
    pub fn owns(&self, kind: &str) -> bool {
        self.owned.iter().any(|k| k.eq_ignore_ascii_case(kind))
    }

    pub fn owns_printer(&self) -> bool {
        self.owned.iter().any(|k| k.contains("printer"))
    }

    pub fn facts(&self) -> Vec<String> {
        let mut facts = vec![format!("{} sits at {}.", self.name, self.location)];
        if self.owned.is_empty() {
            facts.push(format!("{} owns no shareable items.", self.name));
        } else {
            facts.push(format!("{} owns: {}.", self.name, self.owned.join(", ")));
        }
        facts
    }
}

#[derive(Clone, Default)]
pub enum PersonaMode {
    #[default]
    Scripted,
    Llm(Arc<dyn ChatBackend>),
    /// Replies come from a human operator through the session gateway.
    Operator,
}

impl std::fmt::Debug for PersonaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PersonaMode::Scripted => f.write_str("Scripted"),
            PersonaMode::Llm(b) => write!(f, "Llm({})", b.id()),
            PersonaMode::Operator => f.write_str("Operator"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    /// Agrees to help and can: owns the item, can print, will sign.
    Affirm,
    /// Cannot help right now.
    Decline,
    /// Available but lacks the item or capability.
    Lack,
    /// Acknowledges information.
    Ack,
    Silence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonaReply {
    pub text: String,
    pub kind: ReplyKind,
}

impl PersonaReply {
    fn new(text: String, kind: ReplyKind) -> Self {
        Self { text, kind }
    }

    fn silence() -> Self {
        Self::new(String::new(), ReplyKind::Silence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Topic {
    Sign,
    Print,
    Item(String),
    Other,
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whether `kind` (possibly several words) occurs in `ws` as whole words,
/// allowing a plural on the last word.
fn mentions(ws: &[String], kind: &str) -> bool {
    let parts: Vec<&str> = kind.split_whitespace().collect();
    if parts.is_empty() || ws.len() < parts.len() {
        return false;
    }
    ws.windows(parts.len()).any(|win| {
        win.iter().zip(&parts).enumerate().all(|(i, (w, p))| {
            w == p || (i + 1 == parts.len() && (*w == format!("{p}s") || *w == format!("{p}es")))
        })
    })
}

/// The item kind a message talks about, preferring the longest match.
pub fn mentioned_kind(text: &str, vocabulary: &[String]) -> Option<String> {
    let ws = words(text);
    let mut best: Option<&String> = None;
    for kind in vocabulary {
        if mentions(&ws, kind) && best.is_none_or(|b| kind.len() > b.len()) {
            best = Some(kind);
        }
    }
    best.cloned()
}

fn topic(text: &str, vocabulary: &[String]) -> Topic {
    let ws = words(text);
    if ws.iter().any(|w| w.starts_with("sign")) {
        Topic::Sign
    } else if ws.iter().any(|w| w.starts_with("print")) {
        Topic::Print
    } else if let Some(kind) = mentioned_kind(text, vocabulary) {
        Topic::Item(kind)
    } else {
        Topic::Other
    }
}

const QUESTION_WORDS: &[&str] = &[
    "can", "could", "do", "does", "would", "will", "is", "are", "may", "have", "has", "did",
    "anyone", "who",
];

pub fn is_question(text: &str) -> bool {
    text.contains('?')
        || words(text)
            .first()
            .is_some_and(|w| QUESTION_WORDS.contains(&w.as_str()))
}

fn pick<'a>(seed: u64, variants: &[&'a str]) -> &'a str {
    variants[(seed % variants.len() as u64) as usize]
}

/// Deterministic template reply; a pure function of the state, the message
/// and the state's style seed.
pub fn scripted_reply(state: &PersonaState, incoming: &DialogueMessage) -> PersonaReply {
    let group = incoming.channel == Channel::Group;
    let seed = state.style_seed;
    if !state.available {
        if group {
            return PersonaReply::silence();
        }
        let text = pick(
            seed,
            &[
                "Sorry, I'm unavailable right now.",
                "I'm unavailable at the moment, sorry.",
                "Sorry, I am unavailable today.",
            ],
        );
        return PersonaReply::new(text.to_string(), ReplyKind::Decline);
    }

    let reply = if is_question(&incoming.content) {
        match topic(&incoming.content, &state.vocabulary) {
            Topic::Sign => PersonaReply::new(
                pick(seed, &["Of course, I can sign that.", "Sure, I'll sign it and send it back."])
                    .to_string(),
                ReplyKind::Affirm,
            ),
            Topic::Print if state.owns_printer() => PersonaReply::new(
                pick(
                    seed,
                    &[
                        "Sure, I can print it for you.",
                        "Yes, I have a desk printer. I can print it.",
                    ],
                )
                .to_string(),
                ReplyKind::Affirm,
            ),
            Topic::Print => PersonaReply::new(
                "Sorry, I don't have a printer at my desk.".to_string(),
                ReplyKind::Lack,
            ),
            Topic::Item(kind) if state.owns(&kind) => {
                let text = match seed % 2 {
                    0 => format!("Yes, I have a {kind} you can borrow."),
                    _ => format!("Sure, you can borrow my {kind}."),
                };
                PersonaReply::new(text, ReplyKind::Affirm)
            }
            Topic::Item(kind) => {
                PersonaReply::new(format!("Sorry, I don't have a {kind}."), ReplyKind::Lack)
            }
            Topic::Other => {
                PersonaReply::new("I'm here. What do you need?".to_string(), ReplyKind::Ack)
            }
        }
    } else {
        PersonaReply::new(
            pick(seed, &["Got it, thanks.", "Thanks for letting me know."]).to_string(),
            ReplyKind::Ack,
        )
    };

    if group && reply.kind != ReplyKind::Affirm {
        return PersonaReply::silence();
    }
    reply
}

/// Reply text for one incoming message; empty means silence.
pub fn persona_reply(state: &PersonaState, incoming: &DialogueMessage, mode: &PersonaMode) -> String {
    match mode {
        PersonaMode::Scripted => scripted_reply(state, incoming).text,
        PersonaMode::Operator => String::new(),
        PersonaMode::Llm(backend) => {
            let request = persona_request(state, incoming);
            match backend.complete(&request) {
                Ok(r) if !r.text.contains(SILENCE_MARKER) => r.text.trim().to_string(),
                // a failing persona behaves like someone who does not answer
                _ => String::new(),
            }
        }
    }
}

pub fn persona_request(state: &PersonaState, incoming: &DialogueMessage) -> ChatRequest {
    let availability = if state.available {
        "available"
    } else {
        "unavailable"
    };
    let system = PERSONA_PROMPT
        .replace("{name}", &state.name)
        .replace("{availability}", availability)
        .replace("{facts}", &state.facts().join("\n"));
    let channel = match incoming.channel {
        Channel::Direct => "Direct message",
        Channel::Group => "Group chat message",
    };
    ChatRequest::new(RoleTag::Persona, system).with(
        "message",
        format!("{channel} from the assistant: {}", incoming.content),
    )
}

const DECLINE_MARKERS: &[&str] = &[
    "unavailable",
    "not available",
    "can't make it",
    "out of office",
    "not at my desk",
    "busy",
];
const LACK_MARKERS: &[&str] = &[
    "don't have",
    "do not have",
    "don't own",
    "can't help",
    "cannot help",
    "no printer",
    "sorry",
];
const AFFIRM_STARTS: &[&str] = &["yes", "sure", "of course", "yeah", "yep", "absolutely"];
const AFFIRM_MARKERS: &[&str] = &["i have", "i can", "you can borrow", "i'll", "i will"];

/// Classifies free-text replies, for LLM personas and human operators.
pub fn classify_reply(text: &str) -> ReplyKind {
    let lower = text.trim().to_lowercase();
    if lower.is_empty() {
        return ReplyKind::Silence;
    }
    if DECLINE_MARKERS.iter().any(|m| lower.contains(m)) {
        ReplyKind::Decline
    } else if LACK_MARKERS.iter().any(|m| lower.contains(m))
        || matches!(words(&lower).first().map(String::as_str), Some("no" | "nope"))
    {
        ReplyKind::Lack
    } else if AFFIRM_STARTS.iter().any(|m| lower.starts_with(m))
        || AFFIRM_MARKERS.iter().any(|m| lower.contains(m))
    {
        ReplyKind::Affirm
    } else {
        ReplyKind::Ack
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ReplayBackend;
    use proptest::prelude::*;

    fn vocab() -> Vec<String> {
        ["pen", "stapler", "umbrella", "desk printer", "usb drive"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn persona(name: &str, available: bool, owned: &[&str]) -> PersonaState {
        PersonaState {
            person: EntityId::new(format!("h-{}", name.to_lowercase())),
            name: name.into(),
            available,
            location: "Workstation 3".into(),
            owned: owned.iter().map(|s| s.to_string()).collect(),
            vocabulary: vocab(),
            style_seed: 0,
        }
    }

    fn direct(content: &str) -> DialogueMessage {
        DialogueMessage {
            seq: 1,
            channel: Channel::Direct,
            sender: "assistant".into(),
            recipient: "h-x".into(),
            content: content.into(),
        }
    }

    fn group(content: &str) -> DialogueMessage {
        DialogueMessage {
            channel: Channel::Group,
            recipient: "office-group".into(),
            ..direct(content)
        }
    }

    #[test]
    fn unavailable_persona_declines_printing() {
        let mao = persona("Mao", false, &["desk printer", "pen"]);
        let text = persona_reply(&mao, &direct("Could you print my file?"), &PersonaMode::Scripted);
        assert!(text.contains("unavailable"), "{text}");
    }

    #[test]
    fn available_owner_confirms_item() {
        let wu = persona("Wu", true, &["pen"]);
        let r = scripted_reply(&wu, &direct("Do you have a pen I could borrow?"));
        assert_eq!(r.kind, ReplyKind::Affirm);
        assert!(r.text.contains("pen"));
    }

    #[test]
    fn lacking_persona_says_so() {
        let wu = persona("Wu", true, &["pen"]);
        let r = scripted_reply(&wu, &direct("Do you have an umbrella?"));
        assert_eq!(r.kind, ReplyKind::Lack);
        assert!(r.text.contains("umbrella"));
        let r = scripted_reply(&wu, &direct("Can you print this?"));
        assert_eq!(r.kind, ReplyKind::Lack);
    }

    #[test]
    fn information_is_acknowledged() {
        let wu = persona("Wu", true, &["pen"]);
        let r = scripted_reply(&wu, &direct("I'm bringing Lee's notebook to you."));
        assert_eq!(r.kind, ReplyKind::Ack);
    }

    #[test]
    fn word_matching_avoids_substrings() {
        assert_eq!(mentioned_kind("Please open the door", &vocab()), None);
        assert_eq!(mentioned_kind("any pens here?", &vocab()), Some("pen".into()));
        assert_eq!(
            mentioned_kind("Do you have a USB drive?", &vocab()),
            Some("usb drive".into())
        );
    }

    #[test]
    fn group_request_with_everyone_unavailable_gets_no_reply() {
        let members = [
            persona("Guo", false, &["pen"]),
            persona("Zhao", false, &["pen"]),
            persona("Lee", false, &[]),
        ];
        let replies: Vec<String> = members
            .iter()
            .map(|p| persona_reply(p, &group("Does anyone have a pen?"), &PersonaMode::Scripted))
            .filter(|t| !t.is_empty())
            .collect();
        assert!(replies.is_empty());
    }

    #[test]
    fn group_request_answered_only_by_capable_members() {
        let msg = group("Does anyone have a pen?");
        assert!(scripted_reply(&persona("Lee", true, &[]), &msg).text.is_empty());
        assert_eq!(
            scripted_reply(&persona("Guo", true, &["pen"]), &msg).kind,
            ReplyKind::Affirm
        );
        assert!(scripted_reply(&persona("Guo", true, &["pen"]), &group("Lunch is here."))
            .text
            .is_empty());
    }

    #[test]
    fn style_seed_changes_wording_not_meaning() {
        let mut wu = persona("Wu", true, &["pen"]);
        let msg = direct("Do you have a pen?");
        let a = scripted_reply(&wu, &msg);
        wu.style_seed = 1;
        let b = scripted_reply(&wu, &msg);
        assert_ne!(a.text, b.text);
        assert_eq!(a.kind, b.kind);
    }

    #[test]
    fn llm_mode_uses_backend_and_silence_marker() {
        let fixture = crate::llm::Fixture::parse(
            "### persona\nYes, take my pen.\n### persona\n[silence]\n",
        )
        .unwrap();
        let mode = PersonaMode::Llm(Arc::new(ReplayBackend::new(fixture)));
        let wu = persona("Wu", true, &["pen"]);
        assert_eq!(persona_reply(&wu, &direct("Pen?"), &mode), "Yes, take my pen.");
        assert_eq!(persona_reply(&wu, &group("Pen?"), &mode), "");
        // exhausted fixture: silence rather than a panic
        assert_eq!(persona_reply(&wu, &direct("Pen?"), &mode), "");
    }

    #[test]
    fn persona_prompt_states_facts() {
        let req = persona_request(&persona("Mao", false, &["pen"]), &direct("hi"));
        assert!(req.system_prompt.contains("Mao"));
        assert!(req.system_prompt.contains("unavailable"));
        assert!(req.system_prompt.contains("pen"));
        assert!(!req.system_prompt.contains('{'));
    }

    #[test]
    fn classifier_examples() {
        assert_eq!(classify_reply("Sorry, I'm busy today"), ReplyKind::Decline);
        assert_eq!(classify_reply("No, I don't have one"), ReplyKind::Lack);
        assert_eq!(classify_reply("yes, come by"), ReplyKind::Affirm);
        assert_eq!(classify_reply("noted"), ReplyKind::Ack);
        assert_eq!(classify_reply("  "), ReplyKind::Silence);
    }

    fn any_message() -> impl Strategy<Value = DialogueMessage> {
        let texts = prop::sample::select(vec![
            "Do you have a pen I could borrow?",
            "Could you print my file?",
            "Could you please sign Lee's document?",
            "Does anyone have a stapler?",
            "Can anyone print a file for me?",
            "I'm coming to pick up the umbrella.",
            "The meeting moved to 3 pm.",
            "Are you at your desk?",
            "Do you have a USB drive?",
        ]);
        (texts, any::<bool>()).prop_map(|(t, g)| if g { group(t) } else { direct(t) })
    }

    fn any_state() -> impl Strategy<Value = PersonaState> {
        (
            any::<bool>(),
            prop::sample::subsequence(vocab(), 0..=3),
            any::<u64>(),
        )
            .prop_map(|(available, owned, seed)| PersonaState {
                owned,
                style_seed: seed,
                ..persona("Sun", available, &[])
            })
    }

    proptest! {
        #[test]
        fn unavailable_never_affirms(state in any_state(), msg in any_message()) {
            let r = scripted_reply(&state, &msg);
            if !state.available {
                prop_assert_ne!(r.kind, ReplyKind::Affirm);
                prop_assert_ne!(classify_reply(&r.text), ReplyKind::Affirm);
            }
        }

        #[test]
        fn scripted_is_pure(state in any_state(), msg in any_message()) {
            prop_assert_eq!(scripted_reply(&state, &msg), scripted_reply(&state, &msg));
        }

        #[test]
        fn classifier_agrees_with_templates(state in any_state(), msg in any_message()) {
            let r = scripted_reply(&state, &msg);
            prop_assert_eq!(classify_reply(&r.text), r.kind);
        }
    }
}
