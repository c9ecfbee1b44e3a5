//! A rule-based stand-in for a chat model.
//!
//! It reads the rendered memory that every agent request carries, recognises
//! the dataset's errand phrasings and answers each agent role in the format
//! its prompt asks for. Benchmarks, the gateway and dataset checks can then
//! run offline and deterministically. Free-form instructions it does not
//! recognise are declined.

use std::collections::BTreeSet;
use std::time::Instant;

use super::persona::{classify_reply, ReplyKind};
use super::{speaker, ChatBackend, ChatRequest, ChatResponse, LlmError, RoleTag};
use crate::actions::{parse_action, render_action, Action, StopOutcome};
use crate::dataset::errand::Errand;

#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyBackend;

impl PolicyBackend {
    pub fn new() -> Self {
        Self
    }
}

#[derive(Debug, Clone)]
struct Person {
    name: String,
    id: String,
    location: String,
}

#[derive(Debug, Clone)]
struct Msg {
    sender: String,
    group: bool,
    content: String,
}

/// What the policy can read back out of rendered memory text.
#[derive(Debug, Clone, Default)]
struct View {
    instruction: String,
    requester: Option<String>,
    people: Vec<Person>,
    /// (kind, owner name)
    items: Vec<(String, Option<String>)>,
    groups: Vec<String>,
    unavailable: BTreeSet<String>,
    dialogue: Vec<Msg>,
    robot_location: String,
    executed: Vec<Action>,
}

fn same(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn bracketed(entry: &str) -> Option<(&str, &str, &str)> {
    let (name, rest) = entry.split_once(" [")?;
    let (id, tail) = rest.split_once(']')?;
    Some((name, id, tail.trim()))
}

impl View {
    fn parse(text: &str) -> View {
        let mut v = View::default();
        let mut section = "";
        let mut sub = "";
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("## ") {
                section = h.split_whitespace().next().unwrap_or("");
                sub = "";
                continue;
            }
            match section {
                "Instruction" => {
                    if let Some(r) = line.strip_prefix("Requester: ") {
                        v.requester = Some(r.trim().to_string());
                    } else if !line.trim().is_empty() && line.trim() != "(none)" {
                        v.instruction = line.trim().to_string();
                    }
                }
                "Environment" => {
                    if let Some(entry) = line.strip_prefix("- ") {
                        let Some((name, id, tail)) = bracketed(entry) else {
                            continue;
                        };
                        match sub {
                            "People:" => v.people.push(Person {
                                name: name.to_string(),
                                id: id.to_string(),
                                location: tail.strip_prefix("at ").unwrap_or(tail).to_string(),
                            }),
                            "Items:" => {
                                let owner = tail.strip_prefix("owner: ").unwrap_or("unknown");
                                let owner = (owner != "unknown").then(|| owner.to_string());
                                v.items.push((name.to_lowercase(), owner));
                            }
                            "Chat groups:" => v.groups.push(name.to_string()),
                            _ => {}
                        }
                    } else if line.ends_with(':') {
                        sub = line.trim();
                    }
                }
                "Availability" => {
                    if let Some((name, state)) =
                        line.strip_prefix("- ").and_then(|e| e.rsplit_once(": "))
                    {
                        if state == "unavailable" {
                            v.unavailable.insert(name.to_lowercase());
                        }
                    }
                }
                "Dialogue" => {
                    if let Some(m) = parse_message_line(line) {
                        v.dialogue.push(m);
                    }
                }
                "Embodied" => {
                    if let Some(l) = line.strip_prefix("Robot location: ") {
                        v.robot_location = l.to_string();
                    }
                }
                "Trace" => {
                    let l = line.trim();
                    if l.starts_with("ACTION ") {
                        if let Some((action, outcome)) = l.rsplit_once(" => ") {
                            if !outcome.starts_with("rejected") {
                                if let Ok(a) = parse_action(action) {
                                    v.executed.push(a);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        v
    }

    fn person(&self, name: &str) -> Option<&Person> {
        self.people
            .iter()
            .find(|p| same(&p.name, name) || same(&p.id, name))
    }

    fn is_person(&self, name: &str) -> bool {
        self.person(name).is_some()
    }

    fn first(&self, pred: impl Fn(&Action) -> bool) -> Option<usize> {
        self.executed.iter().position(pred)
    }

    fn did(&self, pred: impl Fn(&Action) -> bool) -> bool {
        self.executed.iter().any(pred)
    }

    fn asked(&self, name: &str) -> bool {
        self.did(|a| matches!(a, Action::Inquire { contact, .. } if same(contact, name)))
    }

    fn informed(&self, name: &str) -> bool {
        self.did(|a| matches!(a, Action::Inform { contact, .. } if same(contact, name)))
    }

    fn qr_sent(&self, name: &str) -> bool {
        self.did(|a| matches!(a, Action::SendQRCode { contact } if same(contact, name)))
    }

    fn waited_in_place(&self, name: &str) -> bool {
        self.did(|a| matches!(a, Action::WaitInPlace { user } if same(user, name)))
    }

    fn moved_to(&self, name: &str) -> bool {
        self.did(|a| matches!(a, Action::Move { target_name } if same(target_name, name)))
    }

    fn forwarded(&self, from: &str, to: &str) -> bool {
        self.did(|a| {
            matches!(a, Action::Forward { source, target } if same(source, from) && same(target, to))
        })
    }

    fn waited_since(&self, index: usize) -> bool {
        self.executed[index + 1..]
            .iter()
            .any(|a| matches!(a, Action::Wait { .. }))
    }

    fn last_reply(&self, name: &str) -> Option<ReplyKind> {
        self.dialogue
            .iter()
            .rev()
            .find(|m| same(&m.sender, name))
            .map(|m| classify_reply(&m.content))
    }

    fn unavailable(&self, name: &str) -> bool {
        self.unavailable.contains(&name.to_lowercase())
            || self.last_reply(name) == Some(ReplyKind::Decline)
    }

    fn known_owners(&self, kind: &str) -> Vec<String> {
        let mut owners: Vec<&Person> = self
            .items
            .iter()
            .filter(|(k, _)| same(k, kind))
            .filter_map(|(_, o)| o.as_deref())
            .filter_map(|o| self.person(o))
            .collect();
        owners.sort_by(|a, b| a.id.cmp(&b.id));
        owners.dedup_by(|a, b| a.id == b.id);
        owners.into_iter().map(|p| p.name.clone()).collect()
    }

    /// The person the robot has committed to collecting from, judged by
    /// what it already did.
    fn committed_helper(&self, requester: &str) -> Option<String> {
        self.executed.iter().find_map(|a| match a {
            Action::Forward { source, target } if same(source, requester) => Some(target.clone()),
            Action::SendQRCode { contact } if !same(contact, requester) => Some(contact.clone()),
            Action::Move { target_name }
                if !same(target_name, requester) && self.is_person(target_name) =>
            {
                Some(target_name.clone())
            }
            _ => None,
        })
    }

    fn affirmer(&self, requester: &str) -> Option<String> {
        self.dialogue
            .iter()
            .filter(|m| !same(&m.sender, "Assistant") && !same(&m.sender, requester))
            .filter(|m| self.is_person(&m.sender))
            .find(|m| classify_reply(&m.content) == ReplyKind::Affirm)
            .map(|m| m.sender.clone())
    }
}

fn parse_message_line(line: &str) -> Option<Msg> {
    let rest = line.strip_prefix('[')?;
    let (_, rest) = rest.split_once("] ")?;
    let (sender, rest) = rest.split_once(" -> ")?;
    let (group, content) = if let Some((_, c)) = rest.split_once(" (group): ") {
        (true, c)
    } else {
        let (_, c) = rest.split_once(" (direct): ")?;
        (false, c)
    };
    Some(Msg {
        sender: sender.to_string(),
        group,
        content: content.to_string(),
    })
}

struct Step {
    thought: String,
    actions: Vec<Action>,
}

impl Step {
    fn new(thought: impl Into<String>, actions: Vec<Action>) -> Self {
        Self {
            thought: thought.into(),
            actions,
        }
    }

    fn stop(thought: impl Into<String>, outcome: StopOutcome) -> Self {
        Self::new(thought, vec![Action::Stop { outcome }])
    }
}

fn inform(contact: &str, content: impl Into<String>) -> Action {
    Action::Inform {
        contact: contact.to_string(),
        content: content.into(),
    }
}

fn inquire(contact: &str, question: impl Into<String>) -> Action {
    Action::Inquire {
        contact: contact.to_string(),
        question: question.into(),
    }
}

fn move_to(name: &str) -> Action {
    Action::Move {
        target_name: name.to_string(),
    }
}

fn qr(name: &str) -> Action {
    Action::SendQRCode {
        contact: name.to_string(),
    }
}

fn wip(name: &str) -> Action {
    Action::WaitInPlace {
        user: name.to_string(),
    }
}

fn forward(from: &str, to: &str) -> Action {
    Action::Forward {
        source: from.to_string(),
        target: to.to_string(),
    }
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn next_step(v: &View) -> Step {
    let requester = v.requester.clone().unwrap_or_else(|| "Lee".to_string());
    let r = requester.as_str();
    match Errand::parse(&v.instruction) {
        Some(Errand::Borrow { kind, from }) => helper_flow(v, &kind, &from, r, false),
        Some(Errand::Print { from }) => helper_flow(v, "desk printer", &from, r, true),
        Some(Errand::Deliver { item, to }) => deliver_flow(v, &item, &to, r),
        Some(Errand::Sign { signer }) => sign_flow(v, &signer, r),
        Some(Errand::Notify { to, message }) => notify_flow(v, &to, &message),
        None => Step::new(
            "I do not know how to carry out this request.",
            vec![
                inform(r, "Sorry, I can't handle that request."),
                Action::Stop {
                    outcome: StopOutcome::Unachievable,
                },
            ],
        ),
    }
}

fn helper_flow(v: &View, kind: &str, primary: &str, r: &str, print: bool) -> Step {
    let thing = if print { "printout" } else { kind };
    let helper = v.committed_helper(r).or_else(|| v.affirmer(r));
    let Some(h) = helper else {
        let (direct_q, group_q) = if print {
            (
                format!("Could you print a file for {r}?"),
                format!("Could anyone print a file for {r}?"),
            )
        } else {
            (
                format!("Do you have a {kind} I could borrow?"),
                format!("Does anyone have a {kind} I could borrow?"),
            )
        };
        let mut candidates = vec![primary.to_string()];
        for owner in v.known_owners(kind) {
            if !same(&owner, r) && !candidates.iter().any(|c| same(c, &owner)) {
                candidates.push(owner);
            }
        }
        if let Some(c) = candidates.iter().find(|c| !v.asked(c) && !v.unavailable(c)) {
            return Step::new(
                format!("Ask {c} for help."),
                vec![inquire(c, direct_q)],
            );
        }
        let last_inquiry = v.executed.iter().rposition(|a| matches!(a, Action::Inquire { .. }));
        let pending = candidates
            .iter()
            .any(|c| v.asked(c) && v.last_reply(c).is_none() && !v.unavailable(c));
        if pending && last_inquiry.is_some_and(|i| !v.waited_since(i)) {
            return Step::new(
                "Wait for an answer.",
                vec![Action::Wait {
                    content: "Waiting for a reply.".into(),
                }],
            );
        }
        if let Some(g) = v.groups.first() {
            match v.first(|a| matches!(a, Action::Inquire { contact, .. } if same(contact, g))) {
                None => {
                    return Step::new(
                        format!("Nobody I know can help; ask {g}."),
                        vec![inquire(g, group_q)],
                    )
                }
                Some(i) if !v.waited_since(i) => {
                    return Step::new(
                        format!("Wait for someone in {g} to answer."),
                        vec![Action::Wait {
                            content: format!("Waiting for a reply in {g}."),
                        }],
                    )
                }
                Some(_) => {}
            }
        }
        return Step::stop(
            "Every option is exhausted; the request cannot be completed.",
            StopOutcome::Unachievable,
        );
    };
    let h = h.as_str();

    if print && !v.forwarded(r, h) {
        return Step::new(
            format!("Send {r}'s file to {h} for printing."),
            vec![forward(r, h)],
        );
    }
    if !v.waited_in_place(h) {
        if !v.qr_sent(h) {
            return Step::new(
                format!("Go to {h} to collect the {thing}."),
                vec![
                    inform(h, format!("I'm on my way to pick up the {thing}.")),
                    move_to(h),
                    qr(h),
                ],
            );
        }
        return Step::new(format!("Wait for {h} to load the locker."), vec![wip(h)]);
    }
    if !v.qr_sent(r) {
        return Step::new(
            format!("Bring the {thing} to {r}."),
            vec![
                inform(r, format!("I'm bringing the {thing} to you.")),
                move_to(r),
                qr(r),
            ],
        );
    }
    if !v.waited_in_place(r) {
        return Step::new(
            format!("Hand the {thing} over to {r} and finish."),
            vec![
                wip(r),
                Action::Stop {
                    outcome: StopOutcome::Achieved,
                },
            ],
        );
    }
    Step::stop("The errand is complete.", StopOutcome::Achieved)
}

fn deliver_flow(v: &View, item: &str, t: &str, r: &str) -> Step {
    if !v.informed(t) {
        return Step::new(
            format!("Tell {t} the {item} is coming."),
            vec![inform(t, format!("I'll bring {r}'s {item} to you shortly."))],
        );
    }
    if v.unavailable(t) {
        return Step::stop(
            format!("{t} is unavailable, so the {item} cannot be delivered."),
            StopOutcome::Unachievable,
        );
    }
    if !v.qr_sent(r) {
        return Step::new(
            format!("Collect the {item} from {r}."),
            vec![
                inform(r, format!("I'm coming to pick up your {item}.")),
                move_to(r),
                qr(r),
            ],
        );
    }
    if !v.waited_in_place(r) {
        return Step::new(format!("Wait for {r} to load the locker."), vec![wip(r)]);
    }
    if !v.qr_sent(t) {
        return Step::new(
            format!("Take the {item} to {t}."),
            vec![move_to(t), qr(t)],
        );
    }
    if !v.waited_in_place(t) {
        return Step::new(
            format!("Hand the {item} to {t} and finish."),
            vec![
                wip(t),
                Action::Stop {
                    outcome: StopOutcome::Achieved,
                },
            ],
        );
    }
    Step::stop("The delivery is complete.", StopOutcome::Achieved)
}

fn sign_flow(v: &View, s: &str, r: &str) -> Step {
    if !v.forwarded(r, s) {
        return Step::new(
            format!("Send the document to {s} and ask for a signature."),
            vec![
                forward(r, s),
                inquire(s, format!("Could you please sign {r}'s document?")),
            ],
        );
    }
    if v.unavailable(s) || v.last_reply(s) == Some(ReplyKind::Lack) {
        return Step::stop(
            format!("{s} cannot sign, so the document cannot be signed."),
            StopOutcome::Unachievable,
        );
    }
    match v.last_reply(s) {
        Some(ReplyKind::Affirm) | Some(ReplyKind::Ack) => {
            if !v.forwarded(s, r) {
                Step::new(
                    format!("Return the signed document to {r}."),
                    vec![
                        forward(s, r),
                        Action::Stop {
                            outcome: StopOutcome::Achieved,
                        },
                    ],
                )
            } else {
                Step::stop("The document is signed and returned.", StopOutcome::Achieved)
            }
        }
        _ => {
            let i = v
                .first(|a| matches!(a, Action::Forward { .. }))
                .unwrap_or(0);
            if v.waited_since(i) {
                Step::stop(format!("{s} never answered."), StopOutcome::Unachievable)
            } else {
                Step::new(
                    format!("Wait for {s} to answer."),
                    vec![Action::Wait {
                        content: format!("Waiting for {s} to sign."),
                    }],
                )
            }
        }
    }
}

fn notify_flow(v: &View, t: &str, message: &str) -> Step {
    if !v.informed(t) {
        return Step::new(
            format!("Message {t} before going over."),
            vec![inform(t, format!("{}.", capitalized(message)))],
        );
    }
    if v.unavailable(t) {
        return Step::stop(
            format!("{t} is unavailable, so they cannot be told in person."),
            StopOutcome::Unachievable,
        );
    }
    if !v.moved_to(t) {
        return Step::new(
            format!("Go to {t} in person and finish."),
            vec![
                move_to(t),
                Action::Stop {
                    outcome: StopOutcome::Achieved,
                },
            ],
        );
    }
    Step::stop("The message was delivered in person.", StopOutcome::Achieved)
}

/// The whole action list assuming every contact agrees, for strategies that
/// commit up front.
fn optimistic_script(v: &View) -> Vec<Action> {
    let mut sim = v.clone();
    let mut out = Vec::new();
    for _ in 0..20 {
        let step = next_step(&sim);
        let mut stopped = false;
        for a in step.actions {
            if let Action::Inquire { contact, .. } = &a {
                sim.dialogue.push(Msg {
                    sender: contact.clone(),
                    group: false,
                    content: "Yes, sure.".into(),
                });
            }
            stopped |= matches!(a, Action::Stop { .. });
            sim.executed.push(a.clone());
            out.push(a);
        }
        if stopped {
            break;
        }
    }
    out
}

fn render_lines(actions: &[Action]) -> String {
    actions
        .iter()
        .map(render_action)
        .collect::<Vec<_>>()
        .join("\n")
}

fn perceive(v: &View) -> String {
    let mut focus: Vec<String> = Vec::new();
    let requester = v.requester.clone().unwrap_or_else(|| "none".into());
    let mut names = vec![requester.clone()];
    if let Some(e) = Errand::parse(&v.instruction) {
        names.push(e.named_person().to_string());
        if let Some(kind) = e.needed_kind() {
            names.extend(v.known_owners(kind));
        }
    }
    for n in names {
        if let Some(p) = v.person(&n) {
            let entry = format!("{} at {}", p.name, p.location);
            if !focus.contains(&entry) {
                focus.push(entry);
            }
        }
    }
    let channel = match v.dialogue.iter().rev().find(|m| !same(&m.sender, "Assistant")) {
        Some(m) if m.group => v.groups.first().cloned().unwrap_or_else(|| "group".into()),
        Some(m) => format!("direct chat with {}", m.sender),
        None => format!("direct chat with {requester}"),
    };
    format!(
        "OBSERVATION: The robot is at {}. {} messages so far.\nFOCUS: {}\nCHANNEL: {}",
        if v.robot_location.is_empty() {
            "an unknown place"
        } else {
            &v.robot_location
        },
        v.dialogue.len(),
        if focus.is_empty() {
            "none".to_string()
        } else {
            focus.join("; ")
        },
        channel
    )
}

fn plan(v: &View) -> String {
    let step = next_step(v);
    let completed = if v.executed.is_empty() {
        "Nothing yet.".to_string()
    } else {
        let kinds: Vec<String> = v
            .executed
            .iter()
            .map(|a| match a.target() {
                Some(t) => format!("{} {}", a.kind(), t),
                None => a.kind().to_string(),
            })
            .collect();
        format!("{} actions so far: {}.", kinds.len(), kinds.join(", "))
    };
    let finishing = step
        .actions
        .iter()
        .any(|a| matches!(a, Action::Stop { .. }));
    let mut roadmap = vec![step.thought];
    if !finishing {
        roadmap.push("Continue until the errand is done, then stop.".into());
    }
    let numbered: Vec<String> = roadmap
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect();
    format!("COMPLETED: {completed}\nROADMAP:\n{}", numbered.join("\n"))
}

fn reflect(delta: &str, critique: bool) -> String {
    let mut declined = Vec::new();
    let mut lacking = Vec::new();
    for line in delta.lines() {
        let Some(m) = line.strip_prefix("message ").and_then(parse_message_line) else {
            continue;
        };
        if same(&m.sender, "Assistant") {
            continue;
        }
        match classify_reply(&m.content) {
            ReplyKind::Decline => declined.push(m.sender),
            ReplyKind::Lack => lacking.push(m.sender),
            _ => {}
        }
    }
    if declined.is_empty() && lacking.is_empty() {
        return if critique {
            "The last actions went as planned; keep following the instruction.".into()
        } else {
            "Y\nThe executed actions had the expected effect.".into()
        };
    }
    let mut text = String::new();
    if !critique {
        text.push_str("N\n");
    }
    for name in &declined {
        text.push_str(&format!("{name} declined the request.\n"));
    }
    for name in &lacking {
        text.push_str(&format!("{name} cannot help with this.\n"));
    }
    if critique {
        text.push_str("Look for someone else who can help.");
    } else {
        text.push_str("Another contact is needed.");
        for name in &declined {
            text.push_str(&format!("\nUNAVAILABLE: {name}"));
        }
    }
    text
}

fn persona(request: &ChatRequest) -> String {
    let group = request
        .get(speaker::MESSAGE)
        .is_some_and(|m| m.starts_with("Group"));
    if request.system_prompt.contains("you are unavailable") {
        if group {
            "[silence]".into()
        } else {
            "Sorry, I'm unavailable right now.".into()
        }
    } else if group {
        "[silence]".into()
    } else {
        "Got it, thanks.".into()
    }
}

impl ChatBackend for PolicyBackend {
    fn id(&self) -> &str {
        "policy"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let text = if request.role_tag == RoleTag::Persona {
            persona(request)
        } else {
            let memory = request
                .get(speaker::MEMORY)
                .ok_or_else(|| LlmError::Protocol("policy backend needs a memory context".into()))?;
            let v = View::parse(memory);
            let strategy = request.get(speaker::STRATEGY).unwrap_or("ppdr");
            match (request.role_tag, strategy) {
                (RoleTag::Perception, _) => perceive(&v),
                (RoleTag::Planning, _) => plan(&v),
                (RoleTag::Decision, "direct") => render_lines(&optimistic_script(&v)),
                (RoleTag::Decision, "cot") => format!(
                    "REASONING: I will carry out the instruction step by step, assuming everyone helps.\nACTIONS:\n{}",
                    render_lines(&optimistic_script(&v))
                ),
                (RoleTag::Decision, "react" | "reflexion") => {
                    let step = next_step(&v);
                    format!("THOUGHT: {}\n{}", step.thought, render_lines(&step.actions))
                }
                (RoleTag::Decision, _) => render_lines(&next_step(&v).actions),
                (RoleTag::Reflection, s) => {
                    let delta = request.get(speaker::DELTA).unwrap_or("");
                    reflect(delta, s == "reflexion")
                }
                (RoleTag::Persona, _) => unreachable!("handled above"),
            }
        };
        Ok(ChatResponse {
            text,
            backend_id: self.id().to_string(),
            latency: started.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEMORY: &str = "\
## Instruction
Requester: Lee
Please borrow a pen from Mao and bring it to me.

## Environment
Locations:
- Workstation 1 [loc-ws01]
People:
- Lee [h-lee] at Workstation 1
- Mao [h-mao] at Workstation 2
- Sun [h-sun] at Workstation 4
- Wu [h-wu] at Workstation 3
Facilities:
Items:
- pen [i-pen-mao] owner: Mao
- pen [i-pen-sun] owner: Sun
- pen [i-pen-wu] owner: Wu
- pen [i-pen-guo] owner: unknown
Chat groups:
- Office Group [office-group] 16 members

## Availability
- Lee: available
- Mao: unavailable

## Dialogue (2 of 2)
[1] Assistant -> Mao (direct): Do you have a pen I could borrow?
[2] Mao -> Assistant (direct): Sorry, I'm unavailable right now.

## Embodied State
Robot location: Reception

## Trace (1 of 1 steps)
Step 0
  ACTION Inquire | contact=Mao | question=Do you have a pen I could borrow? => done
";

    fn ask(role: RoleTag, strategy: Option<&str>) -> String {
        let mut req = ChatRequest::new(role, "system").with(speaker::MEMORY, MEMORY);
        if let Some(s) = strategy {
            req = req.with(speaker::STRATEGY, s);
        }
        PolicyBackend.complete(&req).unwrap().text
    }

    #[test]
    fn parses_rendered_memory() {
        let v = View::parse(MEMORY);
        assert_eq!(v.requester.as_deref(), Some("Lee"));
        assert_eq!(v.people.len(), 4);
        assert_eq!(v.known_owners("pen"), vec!["Mao", "Sun", "Wu"]);
        assert!(v.unavailable("Mao"));
        assert_eq!(v.executed.len(), 1);
        assert_eq!(v.groups, vec!["Office Group"]);
    }

    #[test]
    fn moves_on_to_next_known_owner() {
        assert_eq!(
            ask(RoleTag::Decision, None),
            "ACTION Inquire | contact=Sun | question=Do you have a pen I could borrow?"
        );
    }

    #[test]
    fn answers_each_role_in_its_format() {
        let p = ask(RoleTag::Perception, None);
        assert!(p.starts_with("OBSERVATION:") && p.contains("\nFOCUS:") && p.contains("\nCHANNEL:"));
        let plan = ask(RoleTag::Planning, None);
        assert!(plan.starts_with("COMPLETED:") && plan.contains("\nROADMAP:\n1. "));
        let react = ask(RoleTag::Decision, Some("react"));
        assert!(react.starts_with("THOUGHT: "));
    }

    #[test]
    fn direct_strategy_commits_to_the_named_person() {
        let text = ask(RoleTag::Decision, Some("direct"));
        let actions: Vec<Action> = text.lines().map(|l| parse_action(l).unwrap()).collect();
        assert!(actions.len() > 5);
        assert!(matches!(
            actions.last(),
            Some(Action::Stop {
                outcome: StopOutcome::Achieved
            })
        ));
    }

    #[test]
    fn reflection_flags_decliners() {
        let delta = "message [2] Mao -> Assistant (direct): Sorry, I'm unavailable right now.";
        let req = ChatRequest::new(RoleTag::Reflection, "system")
            .with(speaker::MEMORY, MEMORY)
            .with(speaker::DELTA, delta);
        let text = PolicyBackend.complete(&req).unwrap().text;
        assert!(text.starts_with("N\n"));
        assert!(text.contains("UNAVAILABLE: Mao"));

        let req = ChatRequest::new(RoleTag::Reflection, "system")
            .with(speaker::MEMORY, MEMORY)
            .with(speaker::DELTA, "(nothing new)");
        assert!(PolicyBackend.complete(&req).unwrap().text.starts_with("Y\n"));
    }

    #[test]
    fn missing_memory_is_an_error() {
        let req = ChatRequest::new(RoleTag::Decision, "system");
        assert!(matches!(
            PolicyBackend.complete(&req),
            Err(LlmError::Protocol(_))
        ));
    }
}
