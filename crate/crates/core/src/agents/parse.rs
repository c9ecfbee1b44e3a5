//! Parsers for agent outputs and the text forms agents read back.

use crate::actions::{parse_action, render_action, Action, ActionRecord, ExecOutcome};
use crate::memory::{ChatGroup, Channel, IncrementalInfo, TopoGraph, ASSISTANT};

use super::{Judgment, PerceptionPackage, Plan, ReflectionResult};

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label)
        .then(|| line[label.len()..].trim())
}

pub fn parse_perception(text: &str) -> Result<PerceptionPackage, String> {
    const LABELS: [&str; 3] = ["OBSERVATION:", "FOCUS:", "CHANNEL:"];
    let mut sections: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some((i, rest)) = LABELS
            .iter()
            .enumerate()
            .find_map(|(i, l)| strip_label(line, l).map(|r| (i, r)))
        {
            sections[i] = Some(rest.to_string());
            current = Some(i);
        } else if let (Some(i), false) = (current, line.is_empty()) {
            let s = sections[i].get_or_insert_with(String::new);
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(line);
        }
    }
    let mut take = |i: usize| -> Result<String, String> {
        match sections[i].take() {
            Some(s) if !s.is_empty() => Ok(s),
            Some(_) => Ok("none".into()),
            None => Err(format!("missing {} section", LABELS[i].trim_end_matches(':'))),
        }
    };
    Ok(PerceptionPackage {
        observation: take(0)?,
        focus: take(1)?,
        channel: take(2)?,
    })
}

fn roadmap_item(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        return rest
            .strip_prefix('.')
            .or_else(|| rest.strip_prefix(')'))
            .map(str::trim);
    }
    line.strip_prefix("- ").map(str::trim)
}

pub fn parse_plan(text: &str) -> Result<Plan, String> {
    let mut completed = None;
    let mut roadmap = Vec::new();
    let mut in_roadmap = false;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = strip_label(line, "COMPLETED:") {
            completed = Some(rest.to_string());
            in_roadmap = false;
        } else if let Some(rest) = strip_label(line, "ROADMAP:") {
            in_roadmap = true;
            if let Some(item) = roadmap_item(rest).filter(|s| !s.is_empty()) {
                roadmap.push(item.to_string());
            }
        } else if in_roadmap {
            if let Some(item) = roadmap_item(line).filter(|s| !s.is_empty()) {
                roadmap.push(item.to_string());
            }
        }
    }
    let completed = completed.ok_or("missing COMPLETED line")?;
    if roadmap.is_empty() {
        return Err("empty roadmap".into());
    }
    Ok(Plan {
        completed_summary: completed,
        roadmap,
    })
}

/// Collects `ACTION` lines. Other lines are ignored; a bad action line fails
/// the whole output. Anything after a `Stop` is dropped, then the list is cut
/// to `limit`.
pub fn parse_action_lines(text: &str, limit: Option<usize>) -> Result<Vec<Action>, String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        let line = line.strip_prefix("- ").unwrap_or(line);
        if !line.starts_with("ACTION") {
            continue;
        }
        let action = parse_action(line).map_err(|e| e.to_string())?;
        let stop = matches!(action, Action::Stop { .. });
        out.push(action);
        if stop {
            break;
        }
    }
    if out.is_empty() {
        return Err("no action lines".into());
    }
    if let Some(n) = limit {
        out.truncate(n);
    }
    Ok(out)
}

/// Chain-of-thought output: the reasoning preamble is thrown away.
pub fn parse_cot(text: &str) -> Result<Vec<Action>, String> {
    let body = match text.find("ACTIONS:") {
        Some(i) => &text[i + "ACTIONS:".len()..],
        None => text,
    };
    parse_action_lines(body, None)
}

/// ReAct output: an optional `THOUGHT:` line and a few actions.
pub fn parse_react(text: &str, limit: usize) -> Result<(Option<String>, Vec<Action>), String> {
    let thought = text
        .lines()
        .find_map(|l| strip_label(l.trim(), "THOUGHT:"))
        .map(str::to_string);
    Ok((thought, parse_action_lines(text, Some(limit))?))
}

/// First token must be `Y` or `N` (trailing punctuation allowed) and a
/// rationale must follow.
pub fn parse_reflection(text: &str) -> Result<ReflectionResult, String> {
    let text = text.trim();
    let (first, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let token = first.trim_end_matches(['.', ',', ':', ';', '!']);
    let judgment = match token {
        "Y" => Judgment::Y,
        "N" => Judgment::N,
        _ => return Err(format!("expected Y or N, got `{first}`")),
    };
    if rest.is_empty() {
        return Err("missing rationale".into());
    }
    let unavailable = if judgment == Judgment::N {
        rest.lines()
            .filter_map(|l| strip_label(l.trim(), "UNAVAILABLE:"))
            .filter(|n| !n.is_empty())
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    Ok(ReflectionResult {
        judgment,
        rationale: rest.to_string(),
        unavailable,
    })
}

fn party_name(graph: &TopoGraph, groups: &[ChatGroup], party: &str) -> String {
    if party == ASSISTANT {
        return "Assistant".into();
    }
    if let Some(g) = groups.iter().find(|g| g.id == party) {
        return g.name.clone();
    }
    graph.display_name(&party.into()).to_string()
}

/// One line per new message or state change, or `(nothing new)`.
pub fn render_delta(delta: &IncrementalInfo, graph: &TopoGraph, groups: &[ChatGroup]) -> String {
    if delta.is_empty() {
        return "(nothing new)".into();
    }
    let mut lines = Vec::new();
    for m in &delta.new_messages {
        let channel = match m.channel {
            Channel::Direct => "direct",
            Channel::Group => "group",
        };
        lines.push(format!(
            "message [{}] {} -> {} ({channel}): {}",
            m.seq,
            party_name(graph, groups, &m.sender),
            party_name(graph, groups, &m.recipient),
            m.content.replace('\n', " ")
        ));
    }
    for c in &delta.state_changes {
        lines.push(format!("change {}: {} -> {}", c.field, c.old, c.new));
    }
    lines.join("\n")
}

/// The trace-store line for one action: canonical action, then its outcome.
pub fn record_line(record: &ActionRecord) -> String {
    let outcome = match record.exec_outcome {
        ExecOutcome::Done => "done".to_string(),
        ExecOutcome::Waiting => "waiting".to_string(),
        ExecOutcome::Terminated => "terminated".to_string(),
        ExecOutcome::Rejected => format!(
            "rejected: {}",
            record.error.as_deref().unwrap_or("invalid action")
        ),
    };
    format!("{} => {outcome}", render_action(&record.action))
}
