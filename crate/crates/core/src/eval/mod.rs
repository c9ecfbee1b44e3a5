//! Scoring traces against gold, aggregating SR, CR, RR, CTA and RTA per
//! level, and running multi-run benchmarks.
//!
//! Unachievable entries have exactly one required interaction: declaring the
//! errand unachievable. Their CR is 1 when the robot does so and 0 otherwise,
//! and any other interaction counts as redundant.

pub mod bench;
pub mod report;
pub mod score;

use thiserror::Error;

use crate::dataset::gold::GoldError;
use crate::llm::LlmError;

pub use bench::{run_benchmark, run_entry, BackendFactory, BenchConfig, BenchOutput, Execution, ReplayDir, Shared};
pub use report::{aggregate, render_report, LevelMetrics, MetricsReport, ReportConfig, LEVEL_LABELS};
pub use score::{score_episode, score_records, EpisodeScore, Resolver};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace is for entry `{trace}`, not `{entry}`")]
    Mismatch { trace: String, entry: String },
    #[error("entry {entry}: {source}")]
    Gold { entry: String, source: GoldError },
    #[error("run {run} covers different entries than run 0")]
    Coverage { run: usize },
    #[error("entry {entry}: backend: {source}")]
    Backend { entry: String, source: LlmError },
    #[error("world: {0}")]
    World(String),
    #[error("worker pool: {0}")]
    Pool(String),
}
