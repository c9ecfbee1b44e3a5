use std::fmt::Write;

use super::{Channel, LockerState, MemoryPackage, NodeKind, ASSISTANT};

/// Renders a memory package as the descriptive text handed to every agent.
///
/// Sections always appear in this order: instruction, environment,
/// availability, dialogue tail, embodied state, trace tail.
pub fn render_text(package: &MemoryPackage) -> String {
    let mut out = String::new();
    render_instruction(package, &mut out);
    render_environment(package, &mut out);
    render_availability(package, &mut out);
    render_dialogue(package, &mut out);
    render_embodied(package, &mut out);
    render_trace(package, &mut out);
    out
}

fn party_name(package: &MemoryPackage, party: &str) -> String {
    if party == ASSISTANT {
        return "Assistant".to_string();
    }
    if let Some(group) = package.groups.iter().find(|g| g.id == party) {
        return group.name.clone();
    }
    package.graph.display_name(&party.into()).to_string()
}

fn render_instruction(package: &MemoryPackage, out: &mut String) {
    out.push_str("## Instruction\n");
    if let Some(requester) = &package.requester {
        let _ = writeln!(out, "Requester: {}", package.graph.display_name(requester));
    }
    if package.instruction.trim().is_empty() {
        out.push_str("(none)\n");
    } else {
        let _ = writeln!(out, "{}", package.instruction.trim());
    }
    out.push('\n');
}

fn render_environment(package: &MemoryPackage, out: &mut String) {
    let g = &package.graph;
    out.push_str("## Environment\n");
    out.push_str("Locations:\n");
    for loc in g.nodes_of(NodeKind::Location) {
        let _ = writeln!(out, "- {} [{}]", loc.display_name, loc.id);
    }
    out.push_str("People:\n");
    for person in g.nodes_of(NodeKind::Human) {
        let place = g
            .query_location(&person.id)
            .map(|l| g.display_name(&l).to_string())
            .unwrap_or_else(|_| "unknown".to_string());
        let _ = writeln!(out, "- {} [{}] at {}", person.display_name, person.id, place);
    }
    out.push_str("Facilities:\n");
    for facility in g.nodes_of(NodeKind::Facility) {
        let place = g
            .query_location(&facility.id)
            .map(|l| g.display_name(&l).to_string())
            .unwrap_or_else(|_| "unknown".to_string());
        let _ = writeln!(
            out,
            "- {} [{}] at {}",
            facility.display_name, facility.id, place
        );
    }
    out.push_str("Items:\n");
    for item in g.nodes_of(NodeKind::Item) {
        let owner = g
            .owner_of(&item.id)
            .map(|o| g.display_name(&o).to_string())
            .unwrap_or_else(|| "unknown".to_string());
        let _ = writeln!(out, "- {} [{}] owner: {}", item.display_name, item.id, owner);
    }
    if !package.groups.is_empty() {
        out.push_str("Chat groups:\n");
        for group in &package.groups {
            let _ = writeln!(
                out,
                "- {} [{}] {} members",
                group.name,
                group.id,
                group.members.len()
            );
        }
    }
    out.push('\n');
}

fn render_availability(package: &MemoryPackage, out: &mut String) {
    out.push_str("## Availability\n");
    for person in package.graph.nodes_of(NodeKind::Human) {
        let state = match person.availability {
            Some(false) => "unavailable",
            _ => "available",
        };
        let _ = writeln!(out, "- {}: {}", person.display_name, state);
    }
    out.push('\n');
}

fn render_dialogue(package: &MemoryPackage, out: &mut String) {
    let total = package.dialogue.len();
    let shown = total.min(package.dialogue_tail);
    let _ = writeln!(out, "## Dialogue ({shown} of {total})");
    for m in &package.dialogue[total - shown..] {
        let channel = match m.channel {
            Channel::Direct => "direct",
            Channel::Group => "group",
        };
        let _ = writeln!(
            out,
            "[{}] {} -> {} ({}): {}",
            m.seq,
            party_name(package, &m.sender),
            party_name(package, &m.recipient),
            channel,
            m.content.replace('\n', " ")
        );
    }
    out.push('\n');
}

fn render_embodied(package: &MemoryPackage, out: &mut String) {
    let e = &package.embodied;
    let g = &package.graph;
    out.push_str("## Embodied State\n");
    let _ = writeln!(out, "Robot location: {}", g.display_name(&e.robot_location));
    let locker = match e.locker {
        LockerState::Open => "open",
        LockerState::Closed => "closed",
    };
    let _ = writeln!(out, "Locker: {locker}");
    if e.locker_contents.is_empty() {
        out.push_str("Locker contents: none\n");
    } else {
        let items: Vec<String> = e
            .locker_contents
            .iter()
            .map(|id| format!("{} [{}]", g.display_name(id), id))
            .collect();
        let _ = writeln!(out, "Locker contents: {}", items.join(", "));
    }
    let _ = writeln!(
        out,
        "Active QR: {}",
        e.active_qr.as_deref().unwrap_or("none")
    );
    out.push('\n');
}

fn render_trace(package: &MemoryPackage, out: &mut String) {
    let total = package.trace.len();
    let shown = total.min(package.trace_tail);
    let _ = writeln!(out, "## Trace ({shown} of {total} steps)");
    for entry in &package.trace[total - shown..] {
        let _ = writeln!(out, "Step {}", entry.step);
        for line in &entry.lines {
            let _ = writeln!(out, "  {line}");
        }
    }
}
