//! Per-level aggregation over runs and the fixed-width results table.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{AblationFlags, StrategyKind};

use super::score::EpisodeScore;
use super::EvalError;

/// Column labels, in table order.
pub const LEVEL_LABELS: [&str; 4] = ["L1", "L2", "L3", "All"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub entries: usize,
    pub sr: Option<f64>,
    pub cr: Option<f64>,
    pub rr: Option<f64>,
    pub cta: Option<f64>,
    pub rta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub strategy: StrategyKind,
    pub flags: AblationFlags,
    pub backend: String,
    pub seeds: Vec<u64>,
    pub max_steps: u32,
    /// Unachievable entries were left out before aggregating.
    #[serde(default)]
    pub achievable_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ReportConfig,
    pub n_runs: usize,
    /// Keyed by [`LEVEL_LABELS`]; empty for a report with no runs.
    pub levels: Vec<(String, LevelMetrics)>,
    /// Some episode was cut short by a backend failure; the numbers only
    /// cover what finished.
    #[serde(default)]
    pub incomplete: bool,
}

impl MetricsReport {
    pub fn empty(config: ReportConfig) -> Self {
        Self {
            config,
            n_runs: 0,
            levels: Vec::new(),
            incomplete: false,
        }
    }

    pub fn level(&self, label: &str) -> Option<&LevelMetrics> {
        self.levels.iter().find(|(l, _)| l == label).map(|(_, m)| m)
    }
}

/// Sum in a fixed order so permuting inputs gives bit-identical results.
fn stable_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

fn ratio(num: u32, den: u32) -> f64 {
    num as f64 / den as f64
}

fn one_run(scores: &[&EpisodeScore]) -> LevelMetrics {
    let n = scores.len();
    if n == 0 {
        return LevelMetrics::default();
    }
    let mean = |f: &dyn Fn(&EpisodeScore) -> f64| {
        Some(stable_sum(scores.iter().map(|s| f(s)).collect()) / n as f64)
    };
    let pooled = |ok: &dyn Fn(&EpisodeScore) -> u32, all: &dyn Fn(&EpisodeScore) -> u32| {
        let den: u32 = scores.iter().map(|s| all(s)).sum();
        (den > 0).then(|| ratio(scores.iter().map(|s| ok(s)).sum(), den))
    };
    LevelMetrics {
        entries: n,
        sr: mean(&|s| if s.success { 1.0 } else { 0.0 }),
        cr: mean(&|s| ratio(s.completed_necessary, s.total_required.max(1))),
        rr: mean(&|s| ratio(s.redundant, s.total_required.max(1))),
        cta: pooled(&|s| s.cyber_correct, &|s| s.cyber_total),
        rta: pooled(&|s| s.real_correct, &|s| s.real_total),
    }
}

fn mean_of(values: Vec<Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    if present.is_empty() {
        None
    } else {
        let n = present.len();
        Some(stable_sum(present) / n as f64)
    }
}

fn in_column(label: &str, s: &EpisodeScore) -> bool {
    match label {
        "All" => true,
        l => s.level.as_str() == l,
    }
}

/// Averages per-level metrics over runs. Every run must cover the same
/// entries unless `partial` is set.
pub fn aggregate(
    runs: &[Vec<EpisodeScore>],
    config: ReportConfig,
    partial: bool,
) -> Result<MetricsReport, EvalError> {
    if runs.is_empty() {
        return Ok(MetricsReport::empty(config));
    }
    let ids = |run: &[EpisodeScore]| -> BTreeSet<String> {
        run.iter().map(|s| s.entry_id.clone()).collect()
    };
    if !partial {
        let first = ids(&runs[0]);
        for (i, run) in runs.iter().enumerate().skip(1) {
            if ids(run) != first || run.len() != runs[0].len() {
                return Err(EvalError::Coverage { run: i });
            }
        }
    }
    let keep = |s: &&EpisodeScore| !config.achievable_only || s.achievable;
    let mut levels = Vec::new();
    for label in LEVEL_LABELS {
        let per_run: Vec<LevelMetrics> = runs
            .iter()
            .map(|run| {
                let picked: Vec<&EpisodeScore> =
                    run.iter().filter(keep).filter(|s| in_column(label, s)).collect();
                one_run(&picked)
            })
            .collect();
        let pick = |f: fn(&LevelMetrics) -> Option<f64>| mean_of(per_run.iter().map(f).collect());
        levels.push((
            label.to_string(),
            LevelMetrics {
                entries: per_run.iter().map(|m| m.entries).max().unwrap_or(0),
                sr: pick(|m| m.sr),
                cr: pick(|m| m.cr),
                rr: pick(|m| m.rr),
                cta: pick(|m| m.cta),
                rta: pick(|m| m.rta),
            },
        ));
    }
    let incomplete = runs.iter().flatten().any(|s| s.incomplete);
    Ok(MetricsReport {
        config,
        n_runs: runs.len(),
        levels,
        incomplete: incomplete || partial,
    })
}

type Row = (&'static str, fn(&LevelMetrics) -> Option<f64>);

const ROWS: [Row; 5] = [
    ("SR ↑", |m| m.sr),
    ("CR ↑", |m| m.cr),
    ("RR ↓", |m| m.rr),
    ("CTA ↑", |m| m.cta),
    ("RTA ↑", |m| m.rta),
];

/// Fixed-width table with levels as columns.
pub fn render_report(report: &MetricsReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "strategy {}  flags {}  backend {}  runs {}{}",
        c.strategy,
        c.flags.label(),
        c.backend,
        report.n_runs,
        if c.achievable_only { "  achievable only" } else { "" }
    );
    if report.incomplete {
        out.push_str("INCOMPLETE: a backend failed; numbers cover finished episodes only\n");
    }
    let _ = write!(out, "{:<8}", "metric");
    for label in LEVEL_LABELS {
        let _ = write!(out, "{label:>8}");
    }
    out.push('\n');
    if report.levels.is_empty() {
        return out;
    }
    let _ = write!(out, "{:<8}", "n");
    for label in LEVEL_LABELS {
        let n = report.level(label).map(|m| m.entries).unwrap_or(0);
        let _ = write!(out, "{n:>8}");
    }
    out.push('\n');
    for (name, get) in ROWS {
        // arrows are one char wide but three bytes, so pad by chars
        let pad = 8usize.saturating_sub(name.chars().count());
        let _ = write!(out, "{name}{}", " ".repeat(pad));
        for label in LEVEL_LABELS {
            let cell = report
                .level(label)
                .and_then(get)
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".to_string());
            let _ = write!(out, "{cell:>8}");
        }
        out.push('\n');
    }
    out
}
