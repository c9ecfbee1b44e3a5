use std::collections::{BTreeSet, VecDeque};

use crate::actions::{validate, Action, ActionRecord, ExecOutcome, StopOutcome};
use crate::llm::{speaker, ChatBackend, ChatRequest, LlmError, RoleTag};
use crate::memory::{render_text, EntityId, Node, TraceEntry, WorldMemory};
use crate::sim::{ExecStatus, SimEvent, World};
use crate::trace::{EpisodeTrace, TraceEvent, TraceFooter, TraceHeader, TRACE_SCHEMA};

use super::parse::{
    parse_action_lines, parse_cot, parse_perception, parse_plan, parse_react, parse_reflection,
    record_line, render_delta,
};
use super::{
    prompts, AblationFlags, AgentError, Judgment, PerceptionPackage, Plan, ReflectionResult,
    StepRecord, StrategyKind, Verdict, DEFAULT_MAX_STEPS, MAX_ACTIONS_PER_STEP,
    MAX_CONSECUTIVE_MALFORMED, PROMPT_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeInput {
    pub entry_id: String,
    pub requester: EntityId,
    pub instruction: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub strategy: StrategyKind,
    pub flags: AblationFlags,
    pub max_steps: u32,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Ppdr,
            flags: AblationFlags::FULL,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    /// Stages that actually run: baselines use none of the optional ones.
    pub fn effective_flags(&self) -> AblationFlags {
        match self.strategy {
            StrategyKind::Ppdr => self.flags,
            _ => AblationFlags::NONE,
        }
    }
}

pub trait EpisodeHooks {
    fn on_event(&mut self, _event: &TraceEvent) {}

    /// Called before a `Wait` executes and after an `Inquire` executed.
    /// Interactive sessions block here until a human replies, injecting the
    /// reply into the world. Returns false if nobody answered in time.
    fn await_humans(&mut self, _action: &Action, _world: &mut World) -> bool {
        true
    }
}

pub struct NoHooks;

impl EpisodeHooks for NoHooks {}

impl<F: FnMut(&TraceEvent)> EpisodeHooks for F {
    fn on_event(&mut self, event: &TraceEvent) {
        self(event)
    }
}

struct Episode<'a> {
    world: &'a mut World,
    memory: &'a mut WorldMemory,
    backend: &'a dyn ChatBackend,
    hooks: &'a mut dyn EpisodeHooks,
    cfg: EpisodeConfig,
    flags: AblationFlags,
    steps: Vec<StepRecord>,
    /// People already sent an `Inform` this episode.
    informed: BTreeSet<EntityId>,
    critiques: Vec<String>,
    last_delta: String,
    queued: VecDeque<Action>,
}

enum StepEnd {
    Continue,
    Stopped(StopOutcome),
}

/// Runs one instruction to a verdict. `memory` keeps its long-term graph
/// afterwards; its short-term stores are cleared.
pub fn run_episode(
    input: &EpisodeInput,
    cfg: EpisodeConfig,
    world: &mut World,
    memory: &mut WorldMemory,
    backend: &dyn ChatBackend,
    hooks: &mut dyn EpisodeHooks,
) -> EpisodeTrace {
    let requester_name = world.truth().display_name(&input.requester).to_string();
    let header = TraceHeader {
        schema: TRACE_SCHEMA.to_string(),
        entry: input.entry_id.clone(),
        strategy: cfg.strategy,
        flags: cfg.effective_flags(),
        seed: cfg.seed,
        max_steps: cfg.max_steps,
        backend: backend.id().to_string(),
        prompt_version: PROMPT_VERSION.to_string(),
        requester: requester_name,
        instruction: input.instruction.clone(),
    };
    hooks.on_event(&TraceEvent::Header(header.clone()));

    let first = world.begin_episode(&input.requester, &input.instruction);
    memory.set_instruction(input.instruction.clone(), Some(input.requester.clone()));
    memory
        .push_message(first)
        .expect("world sequence numbers are monotone");

    let mut ep = Episode {
        world,
        memory,
        backend,
        hooks,
        cfg,
        flags: cfg.effective_flags(),
        steps: Vec::new(),
        informed: BTreeSet::new(),
        critiques: Vec::new(),
        last_delta: "(nothing new)".into(),
        queued: VecDeque::new(),
    };
    let mut verdict = Verdict::Exhausted;
    let mut error = None;
    let mut malformed_run = 0;
    for step in 0..cfg.max_steps {
        ep.hooks.on_event(&TraceEvent::StepStarted { step });
        match ep.step(step) {
            Ok((record, end)) => {
                if record.malformed.is_some() {
                    malformed_run += 1;
                } else {
                    malformed_run = 0;
                }
                ep.finish_step(record);
                if let StepEnd::Stopped(outcome) = end {
                    verdict = match outcome {
                        StopOutcome::Achieved => Verdict::Achieved,
                        StopOutcome::Unachievable => Verdict::Unachievable,
                    };
                    break;
                }
                if malformed_run >= MAX_CONSECUTIVE_MALFORMED {
                    break;
                }
                if ep.script_exhausted() {
                    break;
                }
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }

    let footer = TraceFooter {
        verdict,
        steps: ep.steps.len() as u32,
        actions: ep.steps.iter().map(|s| s.actions.len() as u32).sum(),
        rejected: ep
            .steps
            .iter()
            .flat_map(|s| &s.actions)
            .filter(|a| a.exec_outcome == ExecOutcome::Rejected)
            .count() as u32,
        malformed_steps: ep.steps.iter().filter(|s| s.malformed.is_some()).count() as u32,
        incomplete: error.is_some(),
        error,
    };
    ep.hooks.on_event(&TraceEvent::Footer(footer.clone()));
    let steps = std::mem::take(&mut ep.steps);
    ep.memory.reset_short_term();
    EpisodeTrace {
        header,
        steps,
        footer,
    }
}

impl Episode<'_> {
    fn strategy(&self) -> &'static str {
        self.cfg.strategy.as_str()
    }

    /// Direct and CoT commit to a script; once it runs out without a Stop
    /// there is nothing left to do.
    fn script_exhausted(&self) -> bool {
        matches!(self.cfg.strategy, StrategyKind::Direct | StrategyKind::Cot)
            && self.queued.is_empty()
            && self
                .steps
                .last()
                .is_some_and(|s| s.malformed.is_none())
    }

    /// One chat call, retried once with feedback when the output does not
    /// parse.
    fn ask<T>(
        &mut self,
        request: ChatRequest,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Result<T, AgentError>, LlmError> {
        let role = request.role_tag;
        let first = self.backend.complete(&request)?;
        let reason = match parse(&first.text) {
            Ok(v) => return Ok(Ok(v)),
            Err(r) => r,
        };
        let retry = request.with(
            speaker::FEEDBACK,
            format!("Your previous answer could not be used ({reason}). Answer again in the required format."),
        );
        let second = self.backend.complete(&retry)?;
        Ok(parse(&second.text).map_err(|r| AgentError::malformed(role, r)))
    }

    fn request(&self, role: RoleTag, prompt: &str, memory_text: &str) -> ChatRequest {
        ChatRequest::new(role, prompt)
            .with(speaker::STRATEGY, self.strategy())
            .with(speaker::MEMORY, memory_text)
    }

    fn empty_record(step: u32) -> StepRecord {
        StepRecord {
            step,
            perception: None,
            plan: None,
            thought: None,
            actions: Vec::new(),
            reflection: None,
            critique: None,
            delta: Default::default(),
            malformed: None,
        }
    }

    fn malformed(&mut self, mut record: StepRecord, err: AgentError) -> (StepRecord, StepEnd) {
        let (role, reason) = match &err {
            AgentError::Malformed { role, reason } => (role.to_string(), reason.clone()),
            AgentError::Backend(e) => ("backend".to_string(), e.to_string()),
        };
        self.hooks.on_event(&TraceEvent::Malformed {
            step: record.step,
            role: role.clone(),
            reason: reason.clone(),
        });
        record.malformed = Some(format!("{role}: {reason}"));
        (record, StepEnd::Continue)
    }

    fn step(&mut self, step: u32) -> Result<(StepRecord, StepEnd), LlmError> {
        let package = self.memory.snapshot(step);
        let text = render_text(&package);
        let mut record = Self::empty_record(step);

        let actions = match self.cfg.strategy {
            StrategyKind::Ppdr => {
                if self.flags.perception {
                    let req = self.request(RoleTag::Perception, prompts::PERCEPTION, &text);
                    match self.ask(req, parse_perception)? {
                        Ok(p) => {
                            self.hooks.on_event(&TraceEvent::Perception {
                                step,
                                perception: p.clone(),
                            });
                            record.perception = Some(p);
                        }
                        Err(e) => return Ok(self.malformed(record, e)),
                    }
                }
                if self.flags.planning {
                    let mut req = self.request(RoleTag::Planning, prompts::PLANNING, &text);
                    if let Some(p) = &record.perception {
                        req = req.with(speaker::FOCUS, p.focus_text());
                    }
                    match self.ask(req, parse_plan)? {
                        Ok(p) => {
                            self.hooks.on_event(&TraceEvent::Plan {
                                step,
                                plan: p.clone(),
                            });
                            record.plan = Some(p);
                        }
                        Err(e) => return Ok(self.malformed(record, e)),
                    }
                }
                match self.decide(&text, record.perception.as_ref(), record.plan.as_ref())? {
                    Ok(a) => a,
                    Err(e) => return Ok(self.malformed(record, e)),
                }
            }
            StrategyKind::Direct | StrategyKind::Cot => {
                if self.queued.is_empty() {
                    let (prompt, cot) = if self.cfg.strategy == StrategyKind::Direct {
                        (prompts::DIRECT, false)
                    } else {
                        (prompts::COT, true)
                    };
                    let req = self.request(RoleTag::Decision, prompt, &text);
                    let parsed = if cot {
                        self.ask(req, parse_cot)?
                    } else {
                        self.ask(req, |t| parse_action_lines(t, None))?
                    };
                    match parsed {
                        Ok(all) => self.queued.extend(all),
                        Err(e) => return Ok(self.malformed(record, e)),
                    }
                }
                self.queued.pop_front().into_iter().collect()
            }
            StrategyKind::React | StrategyKind::Reflexion => {
                let mut req = self
                    .request(RoleTag::Decision, prompts::REACT, &text)
                    .with(speaker::OBSERVATION, self.last_delta.clone());
                if !self.critiques.is_empty() {
                    req = req.with(speaker::REFLECTIONS, self.critiques.join("\n"));
                }
                match self.ask(req, |t| parse_react(t, MAX_ACTIONS_PER_STEP))? {
                    Ok((thought, actions)) => {
                        if let Some(t) = &thought {
                            self.hooks.on_event(&TraceEvent::Thought {
                                step,
                                text: t.clone(),
                            });
                        }
                        record.thought = thought;
                        actions
                    }
                    Err(e) => return Ok(self.malformed(record, e)),
                }
            }
        };

        let mut end = StepEnd::Continue;
        for action in actions {
            let rec = self.execute(step, action);
            if rec.exec_outcome == ExecOutcome::Terminated {
                if let Action::Stop { outcome } = rec.action {
                    end = StepEnd::Stopped(outcome);
                }
            }
            record.actions.push(rec);
            if matches!(end, StepEnd::Stopped(_)) {
                break;
            }
        }

        record.delta = self
            .memory
            .delta_since(&package)
            .expect("package comes from this memory");
        self.last_delta = render_delta(&record.delta, self.memory.graph(), self.memory.groups());

        let executed = record
            .actions
            .iter()
            .any(|a| a.exec_outcome != ExecOutcome::Rejected);
        if executed && self.flags.reflection {
            match self.reflect(&record)? {
                Ok(r) => {
                    self.apply_reflection(&r);
                    self.hooks.on_event(&TraceEvent::Reflection {
                        step,
                        reflection: r.clone(),
                    });
                    record.reflection = Some(r);
                }
                Err(e) => {
                    let (r, _) = self.malformed(record, e);
                    record = r;
                }
            }
        }
        if self.cfg.strategy == StrategyKind::Reflexion && !record.actions.is_empty() {
            let text = render_text(&self.memory.snapshot(step));
            let req = self
                .request(RoleTag::Reflection, prompts::REFLEXION, &text)
                .with(speaker::EXECUTED, executed_text(&record.actions))
                .with(speaker::DELTA, self.last_delta.clone());
            match self.ask(req, |t| {
                let t = t.trim();
                if t.is_empty() {
                    Err("empty critique".to_string())
                } else {
                    Ok(t.to_string())
                }
            })? {
                Ok(c) => {
                    self.hooks.on_event(&TraceEvent::Critique {
                        step,
                        text: c.clone(),
                    });
                    self.critiques.push(c.clone());
                    record.critique = Some(c);
                }
                Err(e) => {
                    let (r, _) = self.malformed(record, e);
                    record = r;
                }
            }
        }
        Ok((record, end))
    }

    fn decide(
        &mut self,
        text: &str,
        perception: Option<&PerceptionPackage>,
        plan: Option<&Plan>,
    ) -> Result<Result<Vec<Action>, AgentError>, LlmError> {
        let mut req = self.request(RoleTag::Decision, prompts::DECISION, text);
        if let Some(p) = perception {
            req = req.with(speaker::FOCUS, p.focus_text());
        }
        if let Some(p) = plan {
            req = req.with(speaker::PLAN, p.text());
        }
        let actions = match self.ask(req.clone(), |t| {
            parse_action_lines(t, Some(MAX_ACTIONS_PER_STEP))
        })? {
            Ok(a) => a,
            Err(e) => return Ok(Err(e)),
        };
        let Some(name) = self.unannounced_move(&actions) else {
            return Ok(Ok(actions));
        };
        let corrective = req.with(
            speaker::FEEDBACK,
            format!(
                "Before moving to {name}, send {name} an Inform in this step or an earlier one. Give the actions again."
            ),
        );
        let again = self.backend.complete(&corrective)?;
        Ok(Ok(
            parse_action_lines(&again.text, Some(MAX_ACTIONS_PER_STEP)).unwrap_or(actions)
        ))
    }

    /// Name of the first person the actions move to without having been
    /// informed first.
    fn unannounced_move(&self, actions: &[Action]) -> Option<String> {
        let graph = self.memory.graph();
        let mut informed = self.informed.clone();
        for a in actions {
            match a {
                Action::Inform { contact, .. } => {
                    if let Some(n) = graph.resolve_human(contact) {
                        informed.insert(n.id.clone());
                    }
                }
                Action::Move { target_name } => {
                    if let Some(n) = graph.resolve_human(target_name) {
                        if !informed.contains(&n.id) {
                            return Some(n.display_name.clone());
                        }
                    }
                }
                _ => {}
            }
        }
        None
    }

    fn reflect(&mut self, record: &StepRecord) -> Result<Result<ReflectionResult, AgentError>, LlmError> {
        let text = render_text(&self.memory.snapshot(record.step));
        let mut req = self
            .request(RoleTag::Reflection, prompts::REFLECTION, &text)
            .with(speaker::EXECUTED, executed_text(&record.actions))
            .with(speaker::DELTA, self.last_delta.clone());
        if let Some(p) = &record.perception {
            req = req.with(speaker::FOCUS, p.focus_text());
        }
        if let Some(p) = &record.plan {
            req = req.with(speaker::PLAN, p.text());
        }
        self.ask(req, parse_reflection)
    }

    fn apply_reflection(&mut self, r: &ReflectionResult) {
        if r.judgment != Judgment::N {
            return;
        }
        for name in &r.unavailable {
            let id = self.memory.graph().resolve_human(name).map(|n| n.id.clone());
            if let Some(id) = id {
                self.memory
                    .graph_mut()
                    .set_availability(&id, false)
                    .expect("resolved a human node");
            }
        }
    }

    fn execute(&mut self, step: u32, action: Action) -> ActionRecord {
        let mut record = ActionRecord {
            step,
            action,
            exec_outcome: ExecOutcome::Rejected,
            emitted_events: 0,
            error: None,
        };
        if let Err(e) = validate(&record.action, self.memory.graph(), self.memory.groups()) {
            record.error = Some(e.to_string());
            self.hooks.on_event(&TraceEvent::Action {
                step,
                record: record.clone(),
            });
            return record;
        }
        let is_wait = matches!(record.action, Action::Wait { .. });
        let is_inquire = matches!(record.action, Action::Inquire { .. });
        if is_wait && !self.world.has_inbox() {
            self.pause(step, &record.action);
        }
        let result = match self.world.execute(&record.action) {
            Ok(r) => r,
            Err(e) => {
                record.error = Some(e.to_string());
                self.hooks.on_event(&TraceEvent::Action {
                    step,
                    record: record.clone(),
                });
                return record;
            }
        };
        let mut events = result.events;
        if is_inquire {
            if !self.pause(step, &record.action) {
                events.push(SimEvent::Change(crate::memory::StateChange::new(
                    "human_timeout",
                    "",
                    record.action.target().unwrap_or_default(),
                )));
            }
            if self.world.has_inbox() {
                events.extend(self.world.drain_inbox());
            }
        }
        record.exec_outcome = match result.status {
            ExecStatus::Done => ExecOutcome::Done,
            ExecStatus::Waiting => ExecOutcome::Waiting,
            ExecStatus::Terminated => ExecOutcome::Terminated,
        };
        record.emitted_events = events.len();
        if let Action::Inform { contact, .. } = &record.action {
            if let Some(n) = self.memory.graph().resolve_human(contact) {
                self.informed.insert(n.id.clone());
            }
        }
        self.hooks.on_event(&TraceEvent::Action {
            step,
            record: record.clone(),
        });
        for e in events {
            self.apply(&e);
            self.hooks.on_event(&TraceEvent::Exec { step, event: e });
        }
        record
    }

    /// Hands control to the hooks so a human can answer. Returns false on
    /// timeout.
    fn pause(&mut self, step: u32, action: &Action) -> bool {
        self.hooks.on_event(&TraceEvent::Awaiting {
            step,
            action: crate::actions::render_action(action),
        });
        self.hooks.await_humans(action, self.world)
    }

    fn apply(&mut self, event: &SimEvent) {
        match event {
            SimEvent::Message(m) => self
                .memory
                .push_message(m.clone())
                .expect("world sequence numbers are monotone"),
            SimEvent::Change(c) => {
                if c.field == "new_item" {
                    if let Some((id, name)) = c.new.split_once(':') {
                        let _ = self
                            .memory
                            .graph_mut()
                            .upsert_node(Node::item(EntityId::new(id), name));
                    }
                }
                self.memory.record_change(c.clone());
            }
        }
    }

    fn finish_step(&mut self, record: StepRecord) {
        let mut lines = Vec::new();
        if let Some(p) = &record.perception {
            lines.push(format!("FOCUS: {}", p.focus));
        }
        if let Some(p) = &record.plan {
            lines.push(format!("PLAN: {}", p.roadmap[0]));
        }
        if let Some(t) = &record.thought {
            lines.push(format!("THOUGHT: {t}"));
        }
        lines.extend(record.actions.iter().map(record_line));
        if let Some(r) = &record.reflection {
            let first = r.rationale.lines().next().unwrap_or("");
            lines.push(format!("REFLECTION: {:?} {first}", r.judgment));
        }
        if let Some(m) = &record.malformed {
            lines.push(format!("MALFORMED: {m}"));
        }
        self.memory.push_trace(TraceEntry {
            step: record.step,
            lines,
        });
        self.hooks.on_event(&TraceEvent::Step(record.clone()));
        self.steps.push(record);
    }
}

fn executed_text(records: &[ActionRecord]) -> String {
    records.iter().map(record_line).collect::<Vec<_>>().join("\n")
}
