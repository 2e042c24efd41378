use qmlopt_core::bench::{
    self, g_curve, load_records, plot_data, run_macro, s99, summarize, summary_from_dir, MacroSettings, Optimum,
};
use qmlopt_core::cokrige::FitOptions;
use qmlopt_core::exec::Parallelism;
use qmlopt_core::optimizer::{self, OptimizerConfig};
use qmlopt_core::sim_core::{GridTable, LossProblem, NoiseFamily};

fn quick(total_budget: u64) -> OptimizerConfig {
    OptimizerConfig {
        total_budget,
        ei_candidates_per_dim: 100,
        ei_polish_starts: 2,
        ei_polish_evals: 60,
        fit: FitOptions { starts: 2, evals_per_param: 40, ..FitOptions::default() },
        ..OptimizerConfig::default()
    }
}

/// `L(x) = 1 - x + N(0, 0.1^2)` on `[0, 1]`: every quantile is linear.
fn linear_problem() -> LossProblem {
    let axes = vec![vec![0.0, 1.0]];
    LossProblem::custom(
        GridTable::new(axes.clone(), vec![1.0, 0.0]).unwrap(),
        GridTable::new(axes, vec![0.1, 0.1]).unwrap(),
        NoiseFamily::Normal,
    )
    .unwrap()
}

#[test]
fn gap_curve_on_linear_objective() {
    let problem = linear_problem();
    let cfg = quick(900);
    let mut trace = optimizer::run(&cfg, &problem).unwrap();
    assert!(trace.rows.len() >= 3);
    let optimum = Optimum::of(&problem, 0.95).unwrap();
    let x0 = trace
        .header
        .initial_design
        .iter()
        .max_by(|a, b| a[0].total_cmp(&b[0]))
        .unwrap()
        .clone();
    trace.rows[0].xhat = x0.clone();
    trace.rows[1].xhat = optimum.x.clone();
    trace.rows[2].xhat = vec![0.5 * (x0[0] + optimum.x[0])];
    let g = g_curve(&trace, &problem, &optimum).unwrap();
    assert!(!g.degenerate);
    assert_eq!(g.values[0], 0.0);
    assert_eq!(g.values[1], 1.0);
    assert!((g.values[2] - 0.5).abs() < 1e-9, "{}", g.values[2]);
}

#[test]
fn s99_boundary_is_first_row() {
    let problem = linear_problem();
    let trace = optimizer::run(&quick(500), &problem).unwrap();
    let evals = trace.eval_counts();
    assert_eq!(evals[0], trace.header.initial_evals + trace.rows[0].budget);
    let mut g = vec![0.0; evals.len()];
    g[0] = 0.995;
    assert_eq!(s99(&g, &evals), Some(evals[0]));
}

#[test]
fn single_replication_summary_is_that_report() {
    let problem = LossProblem::exp1();
    let settings = MacroSettings { reps: 1, holdout_points: 200, ..MacroSettings::default() };
    let summary = run_macro(&quick(500), &problem, &settings, None).unwrap();
    assert_eq!(summary.completed, 1);
    let r = &summary.reports[0];
    assert_eq!(summary.true_selection_frequency, f64::from(u8::from(r.true_selection)));
    assert_eq!(summary.mean_s99, r.s99.map(|v| v as f64));
    assert_eq!(summary.s99_hits, usize::from(r.s99.is_some()));
    assert_eq!(summary.mean_pred_error, r.pred_error);
    assert_eq!(summary.mean_final_v_true, r.final_v_true);
}

#[test]
fn persisted_runs_are_reproducible_and_recomputable() {
    let problem = LossProblem::exp2();
    let cfg = OptimizerConfig { r0: 20, ..quick(400) };
    let settings = MacroSettings {
        reps: 3,
        inject_faults: vec![1],
        holdout_points: 200,
        parallelism: Parallelism::Parallel,
        ..MacroSettings::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let summaries: Vec<_> =
        dirs.iter().map(|d| run_macro(&cfg, &problem, &settings, Some(d.path())).unwrap()).collect();
    assert_eq!(summaries[0], summaries[1]);
    assert!(summaries[0].is_partial());
    assert_eq!(summaries[0].failures.len(), 1);
    for name in ["summary.json", "rep_000.json", "rep_002.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert!(!dirs[0].path().join("rep_001.json").exists());

    let rebuilt =
        summary_from_dir(dirs[0].path(), &cfg, &problem, settings.reps, summaries[0].failures.clone()).unwrap();
    assert_eq!(rebuilt, summaries[0]);
    let text = std::fs::read_to_string(dirs[0].path().join("summary.json")).unwrap();
    let parsed: bench::Summary = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, summaries[0]);
}

#[test]
fn plot_data_of_one_rep_is_that_rep() {
    let problem = LossProblem::exp1();
    let dir = tempfile::tempdir().unwrap();
    let settings = MacroSettings { reps: 1, holdout_points: 100, ..MacroSettings::default() };
    run_macro(&quick(500), &problem, &settings, Some(dir.path())).unwrap();
    let records = load_records(dir.path()).unwrap();
    let data = plot_data(&records).unwrap();
    let report = &records[0].report;
    let rows: Vec<&str> = data.g_curve.lines().skip(1).collect();
    assert_eq!(rows.len(), report.g_curve.len());
    for (i, line) in rows.iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "1");
        assert_eq!(cols[2].parse::<f64>().unwrap(), report.g_curve[i]);
        assert_eq!(cols[3].parse::<u64>().unwrap(), report.evals[i]);
    }
}

#[test]
fn plot_data_averages_elementwise() {
    let problem = LossProblem::exp1();
    let dir = tempfile::tempdir().unwrap();
    let settings = MacroSettings { reps: 2, holdout_points: 100, ..MacroSettings::default() };
    run_macro(&quick(500), &problem, &settings, Some(dir.path())).unwrap();
    let records = load_records(dir.path()).unwrap();
    let data = plot_data(&records).unwrap();
    let first: Vec<f64> = data.g_curve.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    let expected = 0.5 * (records[0].report.g_curve[0] + records[1].report.g_curve[0]);
    assert!((first[2] - expected).abs() < 1e-12);
}

#[test]
fn summary_is_a_pure_fold_of_reports() {
    let problem = LossProblem::exp1();
    let cfg = quick(500);
    let settings = MacroSettings { reps: 2, holdout_points: 100, ..MacroSettings::default() };
    let s = run_macro(&cfg, &problem, &settings, None).unwrap();
    let again = summarize(&cfg, &problem, 2, s.reports.clone(), vec![]);
    assert_eq!(again, s);
}
