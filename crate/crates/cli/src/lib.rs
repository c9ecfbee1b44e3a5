//! Command implementations behind the `deskmate` binary. Each command returns
//! its stdout text and exit code so tests can drive it without a process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use deskmate::agents::{AblationFlags, EpisodeConfig, StepRecord, StrategyKind, Verdict, DEFAULT_MAX_STEPS};
use deskmate::dataset::{self, generate, DatasetFile, TaskEntry};
use deskmate::eval::{
    render_report, run_benchmark, run_entry, score_episode, BackendFactory, BenchConfig, Execution,
    ReplayDir, Shared,
};
use deskmate::llm::{ChatBackend, LlmError, PersonaMode, PolicyBackend, RemoteBackend, RemoteConfig};
use deskmate::llm::replay::{Fixture, ReplayBackend};
use deskmate::llm::RecordingBackend;
use deskmate::scenario::Scenario;
use deskmate::trace::EpisodeTrace;

#[derive(Debug, Parser)]
#[command(name = "deskmate", version, about = "Office errand assistant: run episodes, benchmarks and the session server")]
pub struct Cli {
    /// Scenario file; the bundled office when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Dataset file; the bundled dataset when omitted.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one dataset entry and write its trace.
    Run(RunArgs),
    /// Run entries several times and print the metrics table.
    Bench(BenchArgs),
    /// Level counts of the dataset.
    Stats,
    /// Serve the session API.
    Serve(ServeArgs),
    /// Print a trace file step by step.
    Trace(TraceArgs),
    /// Run one entry and save the model responses as a replay fixture.
    Record(RecordArgs),
    /// Regenerate the dataset from base instructions.
    DatasetGen(DatasetGenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EpisodeArgs {
    /// ppdr, direct, cot, react or reflexion.
    #[arg(long, default_value = "ppdr", value_parser = parse_strategy)]
    pub strategy: StrategyKind,
    #[arg(long)]
    pub no_perception: bool,
    #[arg(long)]
    pub no_planning: bool,
    #[arg(long)]
    pub no_reflection: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: u32,
    /// policy, replay:<fixture file or directory>, or remote (configured
    /// through DESKMATE_LLM_* variables).
    #[arg(long, default_value = "policy")]
    pub backend: String,
}

impl EpisodeArgs {
    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            perception: !self.no_perception,
            planning: !self.no_planning,
            reflection: !self.no_reflection,
        }
    }

    pub fn config(&self) -> EpisodeConfig {
        EpisodeConfig {
            strategy: self.strategy,
            flags: self.flags(),
            max_steps: self.max_steps,
            seed: self.seed,
        }
    }
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    StrategyKind::parse(s).ok_or_else(|| format!("unknown strategy `{s}`"))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub entry: String,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Trace output; `<entry>.jsonl` when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Comma-separated entry ids; every entry when omitted.
    #[arg(long, value_delimiter = ',')]
    pub entries: Vec<String>,
    /// Only entries of this level (L1, L2 or L3).
    #[arg(long)]
    pub level: Option<String>,
    /// Worker threads for parallel runs.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub sequential: bool,
    /// Leave unachievable entries out of the metrics.
    #[arg(long)]
    pub achievable_only: bool,
    /// Directory for report.json, report.txt, scores.jsonl and traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Seconds an interactive episode waits for a human reply.
    #[arg(long, default_value_t = 120)]
    pub human_timeout: u64,
    /// Backend for interactive sessions.
    #[arg(long, default_value = "policy")]
    pub backend: String,
    /// Backend for replay sessions; the interactive one when omitted.
    #[arg(long)]
    pub replay: Option<String>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub file: PathBuf,
    /// Only this step.
    #[arg(long)]
    pub step: Option<u32>,
    /// Only action lines.
    #[arg(long)]
    pub actions_only: bool,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long)]
    pub entry: String,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetGenArgs {
    /// Base instruction file; the bundled bases when omitted.
    #[arg(long)]
    pub bases: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// What a command printed and how the process should exit.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, code: 0 }
    }
}

pub struct Loaded {
    pub scenario: Arc<Scenario>,
    pub dataset: Vec<TaskEntry>,
}

fn load_context(cli: &Cli) -> Result<Loaded> {
    let scenario = match &cli.scenario {
        Some(p) => Scenario::load(p).with_context(|| format!("loading scenario {}", p.display()))?,
        None => Scenario::bundled(),
    };
    let dataset = match &cli.dataset {
        Some(p) => {
            if !p.exists() {
                bail!("dataset {} does not exist", p.display());
            }
            dataset::load(p, &scenario, false).with_context(|| format!("loading dataset {}", p.display()))?
        }
        None if cli.scenario.is_none() => dataset::bundled(),
        None => Vec::new(),
    };
    Ok(Loaded {
        scenario: Arc::new(scenario),
        dataset,
    })
}

/// Every episode replays the same fixture file from its start.
pub struct ReplayFile {
    pub path: PathBuf,
    fixture: Fixture,
}

impl ReplayFile {
    pub fn load(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let fixture = Fixture::load(&path)?;
        Ok(Self { path, fixture })
    }
}

impl BackendFactory for ReplayFile {
    fn id(&self) -> String {
        format!("replay:{}", self.path.display())
    }

    fn make(&self, _: &TaskEntry, _: &EpisodeConfig) -> Result<Arc<dyn ChatBackend>, LlmError> {
        Ok(Arc::new(ReplayBackend::new(self.fixture.clone())))
    }
}

/// Parses a `--backend` value.
pub fn backend_factory(spec: &str) -> Result<Arc<dyn BackendFactory>> {
    match spec {
        "policy" => Ok(Arc::new(Shared(Arc::new(PolicyBackend::new())))),
        "remote" => {
            let backend = RemoteBackend::new(RemoteConfig::from_env()?)?;
            Ok(Arc::new(Shared(Arc::new(backend))))
        }
        s => match s.strip_prefix("replay:") {
            Some(p) if Path::new(p).is_dir() => Ok(Arc::new(ReplayDir { dir: p.into() })),
            Some(p) => Ok(Arc::new(ReplayFile::load(p)?)),
            None => bail!("unknown backend `{s}`; use policy, replay:<path> or remote"),
        },
    }
}

fn find_entry<'a>(ctx: &'a Loaded, id: &str) -> Result<&'a TaskEntry> {
    ctx.dataset
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| anyhow!("unknown entry `{id}`"))
}

/// Whether the robot reached the right verdict for the entry.
pub fn verdict_correct(entry: &TaskEntry, verdict: Verdict) -> bool {
    if entry.achievable {
        verdict == Verdict::Achieved
    } else {
        verdict == Verdict::Unachievable
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Stats => cmd_stats(cli),
        Command::DatasetGen(a) => cmd_dataset_gen(cli, a),
        Command::Trace(a) => cmd_trace(a),
        Command::Run(a) => cmd_run(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Record(a) => cmd_record(cli, a),
        Command::Serve(a) => cmd_serve(cli, a),
    }
}

fn cmd_stats(cli: &Cli) -> Result<Outcome> {
    let ctx = load_context(cli)?;
    Ok(Outcome::ok(dataset::stats(&ctx.dataset).render()))
}

fn cmd_dataset_gen(cli: &Cli, a: &DatasetGenArgs) -> Result<Outcome> {
    let scenario = match &cli.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::bundled(),
    };
    let bases = match &a.bases {
        Some(p) => generate::parse_bases(&std::fs::read_to_string(p)?)?,
        None => dataset::bundled_bases(),
    };
    let file: DatasetFile = dataset::generate_dataset(&bases, &scenario)?;
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    let mut out = dataset::stats(&file.entries).render();
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(Outcome::ok(out))
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<Outcome> {
    let ctx = load_context(cli)?;
    let entry = find_entry(&ctx, &a.entry)?;
    let factory = backend_factory(&a.episode.backend)?;
    let cfg = a.episode.config();
    let backend = factory.make(entry, &cfg)?;
    let trace = run_entry(entry, &ctx.scenario, cfg, PersonaMode::Scripted, backend.as_ref())?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", entry.id)));
    trace.save(&out)?;
    let score = score_episode(&trace, entry, &ctx.scenario)?;
    let ok = verdict_correct(entry, trace.footer.verdict);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} {} verdict={} steps={} actions={} success={} completed={}/{} redundant={}",
        entry.id,
        level_label(entry),
        trace.footer.verdict.as_str(),
        trace.footer.steps,
        trace.footer.actions,
        score.success,
        score.completed_necessary,
        score.total_required,
        score.redundant,
    );
    if let Some(e) = &trace.footer.error {
        let _ = writeln!(text, "error: {e}");
    }
    let _ = writeln!(text, "trace written to {}", out.display());
    Ok(Outcome {
        stdout: text,
        code: if ok { 0 } else { 1 },
    })
}

fn level_label(e: &TaskEntry) -> String {
    format!(
        "{}{}",
        e.level.as_str(),
        if e.achievable { "" } else { " (unachievable)" }
    )
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<Outcome> {
    let ctx = load_context(cli)?;
    if ctx.dataset.is_empty() {
        bail!("dataset is empty");
    }
    let mut entries: Vec<TaskEntry> = if a.entries.is_empty() {
        ctx.dataset.clone()
    } else {
        a.entries
            .iter()
            .map(|id| find_entry(&ctx, id).cloned())
            .collect::<Result<_>>()?
    };
    if let Some(level) = &a.level {
        entries.retain(|e| e.level.as_str().eq_ignore_ascii_case(level));
        if entries.is_empty() {
            bail!("no entries at level `{level}`");
        }
    }
    let factory = backend_factory(&a.episode.backend)?;
    let cfg = BenchConfig {
        strategy: a.episode.strategy,
        flags: a.episode.flags(),
        runs: a.runs,
        base_seed: a.episode.seed,
        max_steps: a.episode.max_steps,
        achievable_only: a.achievable_only,
        persona: PersonaMode::Scripted,
        execution: if a.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        workers: a.workers,
    };
    let out = run_benchmark(&entries, ctx.scenario.clone(), &cfg, factory.as_ref())?;
    let table = render_report(&out.report);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), &table)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&out.report)? + "\n",
        )?;
        let mut scores = String::new();
        for (run, list) in out.scores.iter().enumerate() {
            for s in list {
                let mut v = serde_json::to_value(s)?;
                v["run"] = run.into();
                scores.push_str(&v.to_string());
                scores.push('\n');
            }
        }
        std::fs::write(dir.join("scores.jsonl"), scores)?;
        for (run, traces) in out.traces.iter().enumerate() {
            let sub = dir.join("traces").join(format!("run-{run}"));
            std::fs::create_dir_all(&sub)?;
            for t in traces {
                t.save(sub.join(format!("{}.jsonl", t.header.entry)))?;
            }
        }
    }
    Ok(Outcome {
        stdout: table,
        code: if out.report.incomplete { 2 } else { 0 },
    })
}

fn cmd_record(cli: &Cli, a: &RecordArgs) -> Result<Outcome> {
    let ctx = load_context(cli)?;
    let entry = find_entry(&ctx, &a.entry)?;
    let cfg = a.episode.config();
    let inner = backend_factory(&a.episode.backend)?.make(entry, &cfg)?;
    let recorder = RecordingBackend::new(inner);
    let trace = run_entry(entry, &ctx.scenario, cfg, PersonaMode::Scripted, &recorder)?;
    let fixture = recorder.to_fixture();
    let mut text = format!(
        "recorded for {} ({} {}, backend {}); verdict {}\n",
        entry.id,
        cfg.strategy,
        cfg.flags.label(),
        trace.header.backend,
        trace.footer.verdict.as_str()
    );
    text.push_str(&fixture.render());
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(Outcome::ok(format!(
        "{} responses written to {}\n",
        fixture.len(),
        a.out.display()
    )))
}

fn cmd_serve(cli: &Cli, a: &ServeArgs) -> Result<Outcome> {
    let ctx = load_context(cli)?;
    // build blocking HTTP clients before the async runtime exists
    let interactive = match a.backend.as_str() {
        "policy" => Arc::new(PolicyBackend::new()) as Arc<dyn ChatBackend>,
        "remote" => Arc::new(RemoteBackend::new(RemoteConfig::from_env()?)?),
        other => bail!("interactive sessions need policy or remote, not `{other}`"),
    };
    let replay = match &a.replay {
        Some(spec) => backend_factory(spec)?,
        None => Arc::new(Shared(interactive.clone())),
    };
    let state = deskmate_gateway::AppState::new(deskmate_gateway::GatewayConfig {
        scenario: ctx.scenario.clone(),
        dataset: Arc::new(ctx.dataset),
        backend: interactive,
        replay,
        episode: EpisodeConfig::default(),
        human_timeout: Duration::from_secs(a.human_timeout),
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        deskmate_gateway::serve(listener, state).await
    })?;
    Ok(Outcome::ok(String::new()))
}

fn cmd_trace(a: &TraceArgs) -> Result<Outcome> {
    let trace = EpisodeTrace::load(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    Ok(Outcome::ok(render_trace(&trace, a.step, a.actions_only)))
}

/// Human-readable dump of a trace.
pub fn render_trace(trace: &EpisodeTrace, only_step: Option<u32>, actions_only: bool) -> String {
    let h = &trace.header;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} | {} {} | backend {} | seed {}",
        h.entry,
        h.strategy,
        h.flags.label(),
        h.backend,
        h.seed
    );
    let _ = writeln!(out, "{}: {}", h.requester, h.instruction);
    for s in trace.steps.iter().filter(|s| only_step.is_none_or(|n| s.step == n)) {
        render_step(&mut out, s, actions_only);
    }
    let f = &trace.footer;
    let _ = writeln!(
        out,
        "verdict {} after {} steps, {} actions ({} rejected, {} malformed steps){}",
        f.verdict.as_str(),
        f.steps,
        f.actions,
        f.rejected,
        f.malformed_steps,
        if f.incomplete { ", incomplete" } else { "" }
    );
    if let Some(e) = &f.error {
        let _ = writeln!(out, "error: {e}");
    }
    out
}

fn render_step(out: &mut String, s: &StepRecord, actions_only: bool) {
    let _ = writeln!(out, "-- step {}", s.step);
    if !actions_only {
        if let Some(p) = &s.perception {
            let _ = writeln!(out, "  observation: {}", p.observation);
            let _ = writeln!(out, "  focus: {}", p.focus);
            let _ = writeln!(out, "  channel: {}", p.channel);
        }
        if let Some(p) = &s.plan {
            let _ = writeln!(out, "  done so far: {}", p.completed_summary);
            for (i, r) in p.roadmap.iter().enumerate() {
                let _ = writeln!(out, "  {}. {}", i + 1, r);
            }
        }
        if let Some(t) = &s.thought {
            let _ = writeln!(out, "  thought: {t}");
        }
    }
    for a in &s.actions {
        let _ = write!(out, "  {} => {:?}", a.action, a.exec_outcome);
        if let Some(e) = &a.error {
            let _ = write!(out, " ({e})");
        }
        out.push('\n');
    }
    if actions_only {
        return;
    }
    if let Some(r) = &s.reflection {
        let _ = writeln!(
            out,
            "  reflection: {:?} {}",
            r.judgment,
            r.rationale.replace('\n', " ")
        );
        if !r.unavailable.is_empty() {
            let _ = writeln!(out, "  unavailable: {}", r.unavailable.join(", "));
        }
    }
    if let Some(c) = &s.critique {
        let _ = writeln!(out, "  critique: {}", c.replace('\n', " "));
    }
    if let Some(m) = &s.malformed {
        let _ = writeln!(out, "  malformed: {m}");
    }
}
