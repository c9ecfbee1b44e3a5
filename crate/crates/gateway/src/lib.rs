//! Session service over HTTP. Each session owns one simulated office and runs
//! at most one episode; its trace events stream to any number of subscribers
//! as server-sent events.
//!
//! Inbound persona messages and availability edits for a running episode go
//! through one channel that the episode thread reads only while paused, so
//! they never interleave with a step.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use deskmate::actions::Action;
use deskmate::agents::{run_episode, EpisodeConfig, EpisodeHooks, EpisodeInput, Verdict};
use deskmate::dataset::TaskEntry;
use deskmate::eval::BackendFactory;
use deskmate::llm::{ChatBackend, PersonaMode};
use deskmate::memory::{Channel, DialogueMessage, EntityId, StateChange, ASSISTANT};
use deskmate::scenario::Scenario;
use deskmate::sim::{SimEvent, World};
use deskmate::trace::TraceEvent;

pub const API_PREFIX: &str = "/api/v1";
pub const DEFAULT_HUMAN_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Clone)]
pub struct GatewayConfig {
    pub scenario: Arc<Scenario>,
    /// Entries replay sessions can pick from.
    pub dataset: Arc<Vec<TaskEntry>>,
    /// Decides for interactive sessions.
    pub backend: Arc<dyn ChatBackend>,
    /// Decides for replay sessions.
    pub replay: Arc<dyn BackendFactory>,
    pub episode: EpisodeConfig,
    pub human_timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Interactive,
    BenchmarkReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingInstruction,
    Running,
    Finished,
}

enum Inbound {
    Message { persona: EntityId, text: String },
    Availability { persona: EntityId, available: bool },
}

struct Inner {
    status: Status,
    log: Vec<TraceEvent>,
    step: u32,
    verdict: Option<Verdict>,
    robot_location: String,
    availability: BTreeMap<EntityId, bool>,
    /// Present until the episode starts and takes it.
    world: Option<World>,
    inbound_rx: Option<mpsc::Receiver<Inbound>>,
}

pub struct Session {
    pub id: String,
    pub mode: SessionMode,
    entry: Option<TaskEntry>,
    inner: Mutex<Inner>,
    inbound: mpsc::Sender<Inbound>,
    tx: broadcast::Sender<(usize, TraceEvent)>,
}

impl Session {
    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("session state poisoned")
    }

    fn publish(&self, event: TraceEvent) {
        let mut inner = self.lock();
        match &event {
            TraceEvent::StepStarted { step } => inner.step = *step,
            TraceEvent::Exec {
                event: SimEvent::Change(c),
                ..
            } if c.field == "robot_location" => inner.robot_location = c.new.clone(),
            TraceEvent::Footer(f) => {
                inner.verdict = Some(f.verdict);
                inner.status = Status::Finished;
            }
            _ => {}
        }
        let index = inner.log.len();
        inner.log.push(event.clone());
        // nobody listening is fine
        let _ = self.tx.send((index, event));
    }

    pub fn status(&self) -> Status {
        self.lock().status
    }

    /// Every event so far, in order.
    pub fn events(&self) -> Vec<TraceEvent> {
        self.lock().log.clone()
    }
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<GatewayConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<Session>>>>,
}

impl AppState {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().expect("session table poisoned").get(id).cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(&format!("{API_PREFIX}/sessions"), post(create_session))
        .route(&format!("{API_PREFIX}/sessions/{{id}}"), get(get_session))
        .route(&format!("{API_PREFIX}/sessions/{{id}}/instruction"), post(post_instruction))
        .route(&format!("{API_PREFIX}/sessions/{{id}}/persona"), post(post_persona))
        .route(&format!("{API_PREFIX}/sessions/{{id}}/events"), get(stream_events))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what.into())
}

fn conflict(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::CONFLICT, what.into())
}

fn bad_request(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, what.into())
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    /// `default` or the scenario's name.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub mode: SessionMode,
    /// Dataset entry for replay sessions.
    #[serde(default)]
    pub entry: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub mode: SessionMode,
    pub status: Status,
    pub step: u32,
    pub events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub robot_location: String,
    /// Ground-truth availability by display name.
    pub availability: BTreeMap<String, bool>,
}

fn view(session: &Session, scenario: &Scenario) -> SessionView {
    let inner = session.lock();
    SessionView {
        session_id: session.id.clone(),
        mode: session.mode,
        status: inner.status,
        step: inner.step,
        events: inner.log.len(),
        entry: session.entry.as_ref().map(|e| e.id.clone()),
        verdict: inner.verdict,
        robot_location: inner.robot_location.clone(),
        availability: inner
            .availability
            .iter()
            .map(|(id, v)| (scenario.person_name(id).to_string(), *v))
            .collect(),
    }
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let cfg = state.config.clone();
    let scenario = cfg.scenario.clone();
    if let Some(s) = &req.scenario {
        if s != "default" && s != &scenario.name {
            return Err(not_found(format!("unknown scenario `{s}`")));
        }
    }
    let entry = match req.mode {
        SessionMode::Interactive => None,
        SessionMode::BenchmarkReplay => {
            let id = req
                .entry
                .as_deref()
                .ok_or_else(|| bad_request("replay sessions need an `entry`"))?;
            Some(
                cfg.dataset
                    .iter()
                    .find(|e| e.id == id)
                    .cloned()
                    .ok_or_else(|| not_found(format!("unknown entry `{id}`")))?,
            )
        }
    };
    let (persona, overrides) = match &entry {
        Some(e) => (PersonaMode::Scripted, e.availability.clone()),
        None => (PersonaMode::Operator, BTreeMap::new()),
    };
    let world = World::new(scenario.clone(), &overrides, persona, cfg.episode.seed)
        .map_err(|e| bad_request(e.to_string()))?;
    let availability = scenario
        .people
        .iter()
        .map(|p| (p.id.clone(), world.availability(&p.id).unwrap_or(true)))
        .collect();
    let (inbound, inbound_rx) = mpsc::channel();
    let (tx, _) = broadcast::channel(4096);
    let session = Arc::new(Session {
        id: uuid::Uuid::new_v4().to_string(),
        mode: req.mode,
        entry,
        inner: Mutex::new(Inner {
            status: Status::AwaitingInstruction,
            log: Vec::new(),
            step: 0,
            verdict: None,
            robot_location: world.robot().robot_location.to_string(),
            availability,
            world: Some(world),
            inbound_rx: Some(inbound_rx),
        }),
        inbound,
        tx,
    });
    state
        .sessions
        .lock()
        .expect("session table poisoned")
        .insert(session.id.clone(), session.clone());
    if let Some(e) = session.entry.clone() {
        let backend = cfg
            .replay
            .make(&e, &cfg.episode)
            .map_err(|err| bad_request(err.to_string()))?;
        let input = EpisodeInput {
            entry_id: e.id.clone(),
            requester: e.requester.clone(),
            instruction: e.instruction.clone(),
        };
        start(&session, &cfg, input, backend)?;
    }
    Ok((StatusCode::CREATED, Json(view(&session, &scenario))))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let s = state.session(&id).ok_or_else(|| not_found("unknown session"))?;
    Ok(Json(view(&s, &state.config.scenario)))
}

#[derive(Debug, Deserialize)]
pub struct PostInstruction {
    pub text: String,
    /// Who is asking, by name or id; the first person in the scenario when
    /// omitted.
    #[serde(default)]
    pub requester: Option<String>,
}

async fn post_instruction(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PostInstruction>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let s = state.session(&id).ok_or_else(|| not_found("unknown session"))?;
    if s.mode != SessionMode::Interactive {
        return Err(conflict("replay sessions run their own entry"));
    }
    if req.text.trim().is_empty() {
        return Err(bad_request("empty instruction"));
    }
    let cfg = state.config.clone();
    let requester = match &req.requester {
        Some(r) => cfg
            .scenario
            .person(r)
            .ok_or_else(|| not_found(format!("unknown person `{r}`")))?
            .id
            .clone(),
        None => cfg
            .scenario
            .people
            .first()
            .ok_or_else(|| bad_request("scenario has nobody in it"))?
            .id
            .clone(),
    };
    let input = EpisodeInput {
        entry_id: format!("session-{}", s.id),
        requester,
        instruction: req.text.trim().to_string(),
    };
    start(&s, &cfg, input, cfg.backend.clone())?;
    Ok((StatusCode::ACCEPTED, Json(view(&s, &cfg.scenario))))
}

fn start(
    session: &Arc<Session>,
    cfg: &Arc<GatewayConfig>,
    input: EpisodeInput,
    backend: Arc<dyn ChatBackend>,
) -> Result<(), ApiError> {
    let (mut world, rx) = {
        let mut inner = session.lock();
        if inner.status != Status::AwaitingInstruction {
            return Err(conflict("session already ran its episode"));
        }
        inner.status = Status::Running;
        (
            inner.world.take().expect("world present before start"),
            inner.inbound_rx.take().expect("inbox present before start"),
        )
    };
    let session = session.clone();
    let cfg = cfg.clone();
    tokio::task::spawn_blocking(move || {
        let mut memory = cfg.scenario.fresh_memory();
        let mut hooks = SessionHooks {
            session: session.clone(),
            rx,
            timeout: cfg.human_timeout,
        };
        run_episode(&input, cfg.episode, &mut world, &mut memory, backend.as_ref(), &mut hooks);
    });
    Ok(())
}

struct SessionHooks {
    session: Arc<Session>,
    rx: mpsc::Receiver<Inbound>,
    timeout: Duration,
}

impl SessionHooks {
    /// Applies one inbound item. Returns true if it was a message.
    fn apply(&self, item: Inbound, world: &mut World) -> bool {
        match item {
            Inbound::Message { persona, text } => {
                let injected = world.interactive_inject(DialogueMessage {
                    seq: 0,
                    channel: Channel::Direct,
                    sender: persona.to_string(),
                    recipient: ASSISTANT.to_string(),
                    content: text,
                });
                injected.is_ok()
            }
            Inbound::Availability { persona, available } => {
                let old = world.availability(&persona);
                if world.set_availability(&persona, available).is_ok() {
                    let step = {
                        let mut inner = self.session.lock();
                        inner.availability.insert(persona.clone(), available);
                        inner.step
                    };
                    self.session.publish(TraceEvent::Exec {
                        step,
                        event: SimEvent::Change(StateChange::new(
                            format!("operator_availability:{persona}"),
                            old.map(|v| v.to_string()).unwrap_or_default(),
                            available.to_string(),
                        )),
                    });
                }
                false
            }
        }
    }
}

impl EpisodeHooks for SessionHooks {
    fn on_event(&mut self, event: &TraceEvent) {
        self.session.publish(event.clone());
    }

    fn await_humans(&mut self, _action: &Action, world: &mut World) -> bool {
        let mut got = false;
        while let Ok(item) = self.rx.try_recv() {
            got |= self.apply(item, world);
        }
        if got || world.has_inbox() {
            return true;
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(item) => {
                    if self.apply(item, world) {
                        while let Ok(item) = self.rx.try_recv() {
                            self.apply(item, world);
                        }
                        return true;
                    }
                }
                Err(_) => return false,
            }
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct PostPersona {
    /// Person name or id.
    pub persona: String,
    #[serde(default)]
    pub text: Option<String>,
    /// Operator override of the person's ground-truth availability.
    #[serde(default)]
    pub available: Option<bool>,
}

async fn post_persona(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PostPersona>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let s = state.session(&id).ok_or_else(|| not_found("unknown session"))?;
    if s.mode != SessionMode::Interactive {
        return Err(conflict("personas are scripted in replay sessions"));
    }
    let scenario = &state.config.scenario;
    let persona = scenario
        .person(&req.persona)
        .ok_or_else(|| not_found(format!("unknown persona `{}`", req.persona)))?
        .id
        .clone();
    let text = req.text.as_deref().map(str::trim).filter(|t| !t.is_empty());
    if text.is_none() && req.available.is_none() {
        return Err(bad_request("send `text`, `available` or both"));
    }
    {
        let mut inner = s.lock();
        if inner.status == Status::Finished {
            return Err(conflict("session is closed"));
        }
        if let (Some(v), Some(world)) = (req.available, inner.world.as_mut()) {
            // not started yet: edit the world directly
            world
                .set_availability(&persona, v)
                .map_err(|e| bad_request(e.to_string()))?;
            inner.availability.insert(persona.clone(), v);
        } else if let Some(v) = req.available {
            let _ = s.inbound.send(Inbound::Availability {
                persona: persona.clone(),
                available: v,
            });
        }
        if let Some(t) = text {
            let _ = s.inbound.send(Inbound::Message {
                persona,
                text: t.to_string(),
            });
        }
    }
    Ok((StatusCode::ACCEPTED, Json(view(&s, scenario))))
}

fn sse_event(index: usize, event: &TraceEvent) -> Event {
    let kind = serde_json::to_value(event)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(String::from))
        .unwrap_or_else(|| "event".into());
    Event::default()
        .id(index.to_string())
        .event(kind)
        .data(event.to_line())
}

/// Snapshot of everything so far, then live events until the footer.
pub fn event_stream(session: &Session) -> impl Stream<Item = TraceEvent> + Send + 'static {
    indexed_stream(session).map(|(_, e)| e)
}

fn indexed_stream(session: &Session) -> impl Stream<Item = (usize, TraceEvent)> + Send + 'static {
    // subscribe under the lock so nothing falls between snapshot and live
    let (snapshot, rx, finished) = {
        let inner = session.lock();
        (inner.log.clone(), session.tx.subscribe(), inner.status == Status::Finished)
    };
    let next = snapshot.len();
    let live = stream::unfold(
        (rx, next, finished),
        |(mut rx, next, done)| async move {
            if done {
                return None;
            }
            loop {
                match rx.recv().await {
                    Ok((i, _)) if i < next => continue,
                    Ok((i, e)) => {
                        let end = matches!(e, TraceEvent::Footer(_));
                        return Some(((i, e), (rx, i + 1, end)));
                    }
                    // a lagging client reconnects and gets a fresh snapshot
                    Err(_) => return None,
                }
            }
        },
    );
    stream::iter(snapshot.into_iter().enumerate()).chain(live)
}

async fn stream_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let s = state.session(&id).ok_or_else(|| not_found("unknown session"))?;
    let events = indexed_stream(&s).map(|(i, e)| Ok(sse_event(i, &e)));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
