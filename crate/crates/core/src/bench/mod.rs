//! Macro-replication experiments, gap metrics and result persistence.
//!
//! Output layout of [`run_macro`] in the chosen directory:
//!
//! - `rep_NNN.csv`: per-iteration trace, columns [`CSV_COLUMNS`]
//!   (coordinates and level lists joined with `;`).
//! - `rep_NNN.json`: the full [`RunTrace`] and its [`MetricReport`].
//! - `summary.json`: the [`Summary`] (schema `"v1"`).

mod metrics;
mod trace;

pub use metrics::{g_curve, prediction_error, s99, true_selection, GCurve, Optimum};
pub use trace::{RunTrace, TraceHeader, TraceRow, CSV_COLUMNS};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::{map_range, Parallelism};
use crate::optimizer::{self, OptimizerConfig};
use crate::sim_core::{derive_seed, LossProblem};
use crate::{Error, Result};

pub const SUMMARY_SCHEMA: &str = "v1";

/// Metrics of one macro-replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rep: usize,
    pub seed: u64,
    pub iterations: usize,
    pub g_curve: Vec<f64>,
    pub g_degenerate: bool,
    pub evals: Vec<u64>,
    pub s99: Option<u64>,
    pub final_x: Vec<f64>,
    pub final_v_true: f64,
    pub true_selection: bool,
    /// Holdout RMSE of the model fitted on the initial design.
    pub pred_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub error: String,
}

/// Pure fold over the per-replication reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub config_hash: String,
    pub problem: String,
    pub algorithm: String,
    pub requested_reps: usize,
    pub completed: usize,
    pub failures: Vec<RepFailure>,
    pub true_selection_frequency: f64,
    /// Replications whose gap curve reached 0.99.
    pub s99_hits: usize,
    /// Mean `S_0.99` over the replications that reached it.
    pub mean_s99: Option<f64>,
    pub mean_pred_error: f64,
    pub mean_final_v_true: f64,
    pub reports: Vec<MetricReport>,
}

impl Summary {
    pub fn is_partial(&self) -> bool {
        self.completed < self.requested_reps
    }
}

/// Settings for a batch of independent replications.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSettings {
    pub reps: usize,
    /// Replications that fail on purpose before running (fault injection).
    pub inject_faults: Vec<usize>,
    /// Strict width-normalized distance for a true selection.
    pub selection_tolerance: f64,
    pub holdout_points: usize,
    pub parallelism: Parallelism,
}

impl Default for MacroSettings {
    fn default() -> Self {
        MacroSettings {
            reps: 1,
            inject_faults: Vec::new(),
            selection_tolerance: 0.035,
            holdout_points: 1000,
            parallelism: Parallelism::default(),
        }
    }
}

/// Seed of macro-replication `rep`.
pub fn rep_seed(base: u64, rep: usize) -> u64 {
    derive_seed(base, rep as u64)
}

/// Compute the metrics of one finished run.
pub fn evaluate(
    rep: usize,
    trace: &RunTrace,
    problem: &LossProblem,
    optimum: &Optimum,
    settings: &MacroSettings,
) -> Result<MetricReport> {
    let g = g_curve(trace, problem, optimum)?;
    let evals = trace.eval_counts();
    Ok(MetricReport {
        rep,
        seed: trace.header.seed,
        iterations: trace.rows.len(),
        s99: s99(&g.values, &evals),
        g_curve: g.values,
        g_degenerate: g.degenerate,
        evals,
        final_x: trace.final_x.clone(),
        final_v_true: trace.final_v_true,
        true_selection: true_selection(&trace.final_x, &optimum.x, &problem.domain, settings.selection_tolerance),
        pred_error: prediction_error(&trace.initial_model, problem, settings.holdout_points, trace.header.seed)?,
    })
}

/// Aggregate reports (in replication order) into a summary.
pub fn summarize(
    config: &OptimizerConfig,
    problem: &LossProblem,
    requested_reps: usize,
    reports: Vec<MetricReport>,
    failures: Vec<RepFailure>,
) -> Summary {
    let completed = reports.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    let hits: Vec<f64> = reports.iter().filter_map(|r| r.s99.map(|v| v as f64)).collect();
    Summary {
        schema: SUMMARY_SCHEMA.to_string(),
        config_hash: config.hash(),
        problem: problem.id.as_str().to_string(),
        algorithm: config.algorithm.as_str().to_string(),
        requested_reps,
        completed,
        failures,
        true_selection_frequency: mean(&mut reports.iter().map(|r| f64::from(u8::from(r.true_selection))))
            .unwrap_or(0.0),
        s99_hits: hits.len(),
        mean_s99: mean(&mut hits.iter().copied()),
        mean_pred_error: mean(&mut reports.iter().map(|r| r.pred_error)).unwrap_or(f64::NAN),
        mean_final_v_true: mean(&mut reports.iter().map(|r| r.final_v_true)).unwrap_or(f64::NAN),
        reports,
    }
}

/// Per-replication record as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub report: MetricReport,
    pub trace: RunTrace,
}

/// Run `settings.reps` independently seeded replications, optionally
/// persisting traces and the summary to `out_dir`. A failing replication is
/// recorded in the summary instead of aborting the batch.
pub fn run_macro(
    config: &OptimizerConfig,
    problem: &LossProblem,
    settings: &MacroSettings,
    out_dir: Option<&Path>,
) -> Result<Summary> {
    if settings.reps == 0 {
        return Err(Error::arg("at least one replication is required"));
    }
    config.validate(problem.dim())?;
    let objective = *config.levels.last().expect("validated");
    let optimum = Optimum::of(problem, objective)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let outcomes = map_range(settings.parallelism, settings.reps, |rep| -> Result<RepRecord> {
        if settings.inject_faults.contains(&rep) {
            return Err(Error::Argument(format!("injected fault in replication {rep}")));
        }
        let cfg = OptimizerConfig {
            seed: rep_seed(config.seed, rep),
            parallelism: settings.parallelism,
            ..config.clone()
        };
        let trace = optimizer::run(&cfg, problem)?;
        let report = evaluate(rep, &trace, problem, &optimum, settings)?;
        let record = RepRecord { report, trace };
        if let Some(dir) = out_dir {
            fs::write(dir.join(format!("rep_{rep:03}.csv")), record.trace.to_csv())?;
            fs::write(dir.join(format!("rep_{rep:03}.json")), serde_json::to_string_pretty(&record)?)?;
        }
        Ok(record)
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => reports.push(rec.report),
            Err(e) => failures.push(RepFailure { rep, error: e.to_string() }),
        }
    }
    let summary = summarize(config, problem, settings.reps, reports, failures);
    if let Some(dir) = out_dir {
        write_summary(dir, &summary)?;
    }
    Ok(summary)
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}

/// Load every `rep_NNN.json` in `dir`, sorted by replication index.
pub fn load_records(dir: &Path) -> Result<Vec<RepRecord>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("rep_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let mut records: Vec<RepRecord> = paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.report.rep);
    Ok(records)
}

/// Rebuild the summary from persisted per-replication files.
pub fn summary_from_dir(
    dir: &Path,
    config: &OptimizerConfig,
    problem: &LossProblem,
    requested_reps: usize,
    failures: Vec<RepFailure>,
) -> Result<Summary> {
    let reports = load_records(dir)?.into_iter().map(|r| r.report).collect();
    Ok(summarize(config, problem, requested_reps, reports, failures))
}

/// Tidy, plot-ready tables averaged over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `k,reps,mean_g,mean_evals`
    pub g_curve: String,
    /// `k,reps,mean_v_true,mean_y_hat`
    pub best_so_far: String,
    /// `bin_lo,bin_hi,points`: final replication counts per design point.
    pub allocation_histogram: String,
}

/// Average per-iteration curves across `records`; iteration `k` averages
/// over the replications that reached it.
pub fn plot_data(records: &[RepRecord]) -> Result<PlotData> {
    if records.is_empty() {
        return Err(Error::arg("no replication records to aggregate"));
    }
    let max_k = records.iter().map(|r| r.trace.rows.len()).max().unwrap_or(0);
    let mut g = String::from("k,reps,mean_g,mean_evals\n");
    let mut best = String::from("k,reps,mean_v_true,mean_y_hat\n");
    for i in 0..max_k {
        let alive: Vec<&RepRecord> = records.iter().filter(|r| r.trace.rows.len() > i).collect();
        let n = alive.len() as f64;
        let mg = alive.iter().map(|r| r.report.g_curve[i]).sum::<f64>() / n;
        let me = alive.iter().map(|r| r.report.evals[i] as f64).sum::<f64>() / n;
        let mv = alive.iter().map(|r| r.trace.rows[i].v_true).sum::<f64>() / n;
        let my = alive.iter().map(|r| r.trace.rows[i].y_hat).sum::<f64>() / n;
        g.push_str(&format!("{},{},{},{}\n", i + 1, alive.len(), mg, me));
        best.push_str(&format!("{},{},{},{}\n", i + 1, alive.len(), mv, my));
    }
    let counts: Vec<u64> = records.iter().flat_map(final_counts).collect();
    let hi = counts.iter().copied().max().unwrap_or(0);
    let bins = 20u64;
    let width = (hi / bins + 1).max(1);
    let mut hist = vec![0usize; bins as usize + 1];
    for c in &counts {
        hist[(c / width) as usize] += 1;
    }
    let mut h = String::from("bin_lo,bin_hi,points\n");
    for (b, n) in hist.iter().enumerate() {
        let lo = b as u64 * width;
        h.push_str(&format!("{},{},{}\n", lo, lo + width, n));
    }
    Ok(PlotData { g_curve: g, best_so_far: best, allocation_histogram: h })
}

/// Final replication count of every design point in a run.
fn final_counts(record: &RepRecord) -> Vec<u64> {
    let n0 = record.trace.header.initial_design.len();
    let r0 = record.trace.header.initial_evals / n0.max(1) as u64;
    let total = n0 + record.trace.rows.len();
    let mut counts = vec![0u64; total];
    for c in counts.iter_mut().take(n0) {
        *c = r0;
    }
    for row in &record.trace.rows {
        for (c, a) in counts.iter_mut().zip(&row.allocation) {
            *c += a;
        }
    }
    counts
}
