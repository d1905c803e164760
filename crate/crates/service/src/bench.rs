//! Before/after refinement benchmark over a scene corpus.

use std::path::Path;
use std::time::Instant;

use lap_core::metrics::{self, ExclusionConfig, MetricReport, REPORT_COLUMNS};
use lap_core::perturb::{align_ground, sample_perturbation, scene_rng, PerturbConfig};
use lap_core::refine::{refine_with_image, ExternalPolicy, Policy, RefineConfig, RulePolicy, StopPolicy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, GridDefaults};
use crate::corpus::{list_scenes, load_corpus_scene, scene_id, LoadedScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Rule,
    External,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// Perturb each ground-truth layout, then refine.
    Synthetic,
    /// Refine the `<stem>.init.json` layout shipped with each scene.
    ExternalInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub policy: PolicyKind,
    pub mode: BenchMode,
    pub seed: u64,
    pub workers: usize,
    pub grid: GridDefaults,
    pub refine: RefineConfig,
    pub perturb: PerturbConfig,
    pub exclusions: ExclusionConfig,
}

impl BenchOptions {
    pub fn from_config(cfg: &Config, policy: PolicyKind, mode: BenchMode) -> Self {
        Self {
            policy,
            mode,
            seed: cfg.bench.seed,
            workers: cfg.bench.workers,
            grid: cfg.grid.clone(),
            refine: cfg.refine.clone(),
            perturb: cfg.perturb.clone(),
            exclusions: cfg.exclusions.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read corpus {path}: {source}")]
    Corpus { path: String, source: std::io::Error },
    #[error("external policy needs an endpoint (config `refine.endpoint` or LAP_ENDPOINT)")]
    NoEndpoint,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene: String,
    pub before: MetricReport,
    pub after: MetricReport,
    pub rounds: usize,
    pub converged: bool,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub scene: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub corpus: String,
    pub policy: PolicyKind,
    pub mode: BenchMode,
    pub seed: u64,
    pub rows: Vec<SceneRow>,
    pub before: MetricReport,
    pub after: MetricReport,
    pub delta: MetricReport,
    pub quarantine: Vec<QuarantineEntry>,
    pub wall_clock_secs: f64,
    pub mean_rounds: f64,
    pub mean_actions: f64,
}

pub fn make_policy(kind: PolicyKind, loaded: &LoadedScene, refine: &RefineConfig) -> Result<Box<dyn Policy + Send + Sync>, String> {
    Ok(match kind {
        PolicyKind::Stop => Box::new(StopPolicy),
        PolicyKind::Rule => Box::new(RulePolicy::new(loaded.graph.clone())),
        PolicyKind::External => Box::new(ExternalPolicy::from_config(refine).ok_or("no endpoint configured")?),
    })
}

fn evaluate_scene(path: &Path, opts: &BenchOptions) -> Result<SceneRow, String> {
    let loaded = load_corpus_scene(path, &opts.grid, &opts.exclusions)?;
    let start = match opts.mode {
        BenchMode::Synthetic => {
            let mut rng = scene_rng(opts.seed, &loaded.id);
            sample_perturbation(&loaded.gt, &opts.perturb, &mut rng).perturbed
        }
        BenchMode::ExternalInit => {
            let init = loaded.external_init.as_ref().ok_or("missing external init layout")?;
            align_ground(init, &loaded.gt)
        }
    };
    let policy = make_policy(opts.policy, &loaded, &opts.refine)?;
    let traj = refine_with_image(&start, loaded.scene.image.as_deref(), policy.as_ref(), &opts.refine).map_err(|e| e.to_string())?;
    let k = &loaded.scene.intrinsics;
    let eval = |l| metrics::evaluate(l, &loaded.gt, &loaded.scene.boxes, k, &opts.exclusions).map_err(|e| e.to_string());
    Ok(SceneRow {
        scene: loaded.id.clone(),
        before: eval(&start)?,
        after: eval(traj.last())?,
        rounds: traj.rounds_used,
        converged: traj.converged,
        actions: traj.action_count(),
    })
}

/// Evaluates every scene in `dir`; per-scene failures are quarantined and
/// the run continues.
pub fn run_benchmark(dir: &Path, opts: &BenchOptions) -> Result<BenchmarkRun, BenchError> {
    if opts.policy == PolicyKind::External && opts.refine.endpoint.is_none() {
        return Err(BenchError::NoEndpoint);
    }
    let clock = Instant::now();
    let paths = list_scenes(dir).map_err(|source| BenchError::Corpus { path: dir.display().to_string(), source })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.workers).build().map_err(|e| BenchError::Pool(e.to_string()))?;
    let results: Vec<(String, Result<SceneRow, String>)> =
        pool.install(|| paths.par_iter().map(|p| (scene_id(p), evaluate_scene(p, opts))).collect());

    let mut rows = Vec::new();
    let mut quarantine = Vec::new();
    for (scene, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(error) => quarantine.push(QuarantineEntry { scene, error }),
        }
    }
    let before = MetricReport::mean(&rows.iter().map(|r| r.before).collect::<Vec<_>>()).unwrap_or_default();
    let after = MetricReport::mean(&rows.iter().map(|r| r.after).collect::<Vec<_>>()).unwrap_or_default();
    let n = rows.len().max(1) as f64;
    Ok(BenchmarkRun {
        corpus: dir.display().to_string(),
        policy: opts.policy,
        mode: opts.mode,
        seed: opts.seed,
        mean_rounds: rows.iter().map(|r| r.rounds as f64).sum::<f64>() / n,
        mean_actions: rows.iter().map(|r| r.actions as f64).sum::<f64>() / n,
        delta: after.delta(&before),
        before,
        after,
        rows,
        quarantine,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    })
}

pub const TABLE_DECIMALS: usize = 4;

fn table_row(label: &str, r: &MetricReport) -> String {
    let cells: Vec<String> = r.values().iter().map(|v| format!("{v:.TABLE_DECIMALS$}")).collect();
    format!("{label}\t{}", cells.join("\t"))
}

/// Tab-separated aggregate table: before, after and the change.
pub fn aggregate_table(run: &BenchmarkRun) -> String {
    let mut lines = vec![format!("State\t{}", REPORT_COLUMNS.join("\t"))];
    lines.push(table_row("Before Ref.", &run.before));
    lines.push(table_row("After Ref.", &run.after));
    lines.push(table_row("Delta", &run.delta));
    lines.join("\n") + "\n"
}

/// Tab-separated per-scene rows (before and after).
pub fn scene_table(run: &BenchmarkRun) -> String {
    let mut lines = vec![format!("Scene\tState\t{}", REPORT_COLUMNS.join("\t"))];
    for r in &run.rows {
        lines.push(format!("{}\t{}", r.scene, table_row("Before Ref.", &r.before)));
        lines.push(format!("{}\t{}", r.scene, table_row("After Ref.", &r.after)));
    }
    lines.join("\n") + "\n"
}

/// One-line summary of a run.
pub fn describe(run: &BenchmarkRun) -> String {
    format!(
        "{} scenes evaluated, {} quarantined, {:.2} rounds and {:.2} actions per scene, {:.2}s",
        run.rows.len(),
        run.quarantine.len(),
        run.mean_rounds,
        run.mean_actions,
        run.wall_clock_secs
    )
}
