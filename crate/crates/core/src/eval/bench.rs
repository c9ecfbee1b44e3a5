//! Multi-run benchmark driver.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::agents::{run_episode, AblationFlags, EpisodeConfig, EpisodeInput, NoHooks, StrategyKind};
use crate::dataset::TaskEntry;
use crate::llm::persona::PersonaMode;
use crate::llm::replay::ReplayBackend;
use crate::llm::{ChatBackend, LlmError};
use crate::scenario::Scenario;
use crate::sim::World;
use crate::trace::EpisodeTrace;

use super::report::{aggregate, MetricsReport, ReportConfig};
use super::score::{score_episode, EpisodeScore};
use super::EvalError;

/// Hands out a backend per episode, so stateful backends such as replay
/// cursors never leak between entries.
pub trait BackendFactory: Send + Sync {
    fn id(&self) -> String;

    fn make(&self, entry: &TaskEntry, cfg: &EpisodeConfig) -> Result<Arc<dyn ChatBackend>, LlmError>;
}

/// One stateless backend shared by every episode.
pub struct Shared(pub Arc<dyn ChatBackend>);

impl BackendFactory for Shared {
    fn id(&self) -> String {
        self.0.id().to_string()
    }

    fn make(&self, _: &TaskEntry, _: &EpisodeConfig) -> Result<Arc<dyn ChatBackend>, LlmError> {
        Ok(self.0.clone())
    }
}

/// Replay fixtures from a directory. For entry `e` the first existing file
/// of `e.<strategy>.fixture` (baselines), `e.<ablation>.fixture` (ablations,
/// dashes as underscores) and `e.fixture` is used.
pub struct ReplayDir {
    pub dir: PathBuf,
}

impl ReplayDir {
    pub fn candidates(&self, entry: &str, cfg: &EpisodeConfig) -> Vec<PathBuf> {
        let mut names = Vec::new();
        if cfg.strategy != StrategyKind::Ppdr {
            names.push(format!("{entry}.{}.fixture", cfg.strategy.as_str()));
        } else if cfg.flags != AblationFlags::FULL {
            names.push(format!("{entry}.{}.fixture", cfg.flags.label().replace('-', "_")));
        }
        names.push(format!("{entry}.fixture"));
        names.into_iter().map(|n| self.dir.join(n)).collect()
    }
}

impl BackendFactory for ReplayDir {
    fn id(&self) -> String {
        format!("replay:{}", self.dir.display())
    }

    fn make(&self, entry: &TaskEntry, cfg: &EpisodeConfig) -> Result<Arc<dyn ChatBackend>, LlmError> {
        let candidates = self.candidates(&entry.id, cfg);
        let path = candidates
            .iter()
            .find(|p| p.exists())
            .ok_or_else(|| LlmError::Config(format!("no fixture for {}", entry.id)))?;
        let backend = ReplayBackend::from_path(path).map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Arc::new(backend))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Entries of a run spread over the rayon pool. Falls back to
    /// sequential when built without the `parallel` feature.
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub strategy: StrategyKind,
    pub flags: AblationFlags,
    pub runs: usize,
    pub base_seed: u64,
    pub max_steps: u32,
    pub achievable_only: bool,
    pub persona: PersonaMode,
    pub execution: Execution,
    /// Size of a dedicated worker pool for parallel runs; the global rayon
    /// pool when unset.
    pub workers: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Ppdr,
            flags: AblationFlags::FULL,
            runs: 5,
            base_seed: 0,
            max_steps: crate::agents::DEFAULT_MAX_STEPS,
            achievable_only: false,
            persona: PersonaMode::Scripted,
            execution: Execution::Parallel,
            workers: None,
        }
    }
}

impl BenchConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.base_seed + r).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub report: MetricsReport,
    /// Per run, in entry order; entries skipped after an abort are absent.
    pub scores: Vec<Vec<EpisodeScore>>,
    pub traces: Vec<Vec<EpisodeTrace>>,
}

/// Runs one entry in a fresh world built from the scenario plus the entry's
/// availability overrides.
pub fn run_entry(
    entry: &TaskEntry,
    scenario: &Arc<Scenario>,
    cfg: EpisodeConfig,
    persona: PersonaMode,
    backend: &dyn ChatBackend,
) -> Result<EpisodeTrace, EvalError> {
    let mut world = World::new(scenario.clone(), &entry.availability, persona, cfg.seed)
        .map_err(|e| EvalError::World(e.to_string()))?;
    let mut memory = scenario.fresh_memory();
    let input = EpisodeInput {
        entry_id: entry.id.clone(),
        requester: entry.requester.clone(),
        instruction: entry.instruction.clone(),
    };
    Ok(run_episode(&input, cfg, &mut world, &mut memory, backend, &mut NoHooks))
}

type Outcome = Option<Result<(EpisodeTrace, EpisodeScore), EvalError>>;

pub fn run_benchmark(
    entries: &[TaskEntry],
    scenario: Arc<Scenario>,
    cfg: &BenchConfig,
    factory: &dyn BackendFactory,
) -> Result<BenchOutput, EvalError> {
    let abort = AtomicBool::new(false);
    let mut scores = Vec::new();
    let mut traces = Vec::new();
    for seed in cfg.seeds() {
        let ecfg = EpisodeConfig {
            strategy: cfg.strategy,
            flags: cfg.flags,
            max_steps: cfg.max_steps,
            seed,
        };
        let one = |entry: &TaskEntry| -> Outcome {
            if abort.load(Ordering::SeqCst) {
                return None;
            }
            let result = (|| {
                let backend = factory.make(entry, &ecfg).map_err(|source| EvalError::Backend {
                    entry: entry.id.clone(),
                    source,
                })?;
                let trace = run_entry(entry, &scenario, ecfg, cfg.persona.clone(), backend.as_ref())?;
                if trace.footer.incomplete {
                    abort.store(true, Ordering::SeqCst);
                }
                let score = score_episode(&trace, entry, &scenario)?;
                Ok((trace, score))
            })();
            Some(result)
        };
        let outcomes: Vec<Outcome> = match cfg.execution {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                match cfg.workers {
                    Some(n) => rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| EvalError::Pool(e.to_string()))?
                        .install(|| entries.par_iter().map(one).collect()),
                    None => entries.par_iter().map(one).collect(),
                }
            }
            _ => entries.iter().map(one).collect(),
        };
        let mut run_scores = Vec::new();
        let mut run_traces = Vec::new();
        for o in outcomes.into_iter().flatten() {
            let (t, s) = o?;
            run_traces.push(t);
            run_scores.push(s);
        }
        scores.push(run_scores);
        traces.push(run_traces);
        if abort.load(Ordering::SeqCst) {
            break;
        }
    }
    let config = ReportConfig {
        strategy: cfg.strategy,
        flags: cfg.flags,
        backend: factory.id(),
        seeds: cfg.seeds(),
        max_steps: cfg.max_steps,
        achievable_only: cfg.achievable_only,
    };
    let report = aggregate(&scores, config, abort.load(Ordering::SeqCst))?;
    Ok(BenchOutput {
        report,
        scores,
        traces,
    })
}
