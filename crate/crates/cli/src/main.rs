//! `qmlopt`: run optimization experiments, validate the quantile
//! estimators and export plot-ready tables.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when some
//! macro-replications failed, 3 when an estimator check is out of tolerance.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use qmlopt_core::bench::{self, Summary};
use qmlopt_core::exec::with_jobs;
use qmlopt_core::optimizer::Algorithm;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qmlopt_core::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qmlopt", version, about = "Multi-level quantile simulation optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run macro-replications of the optimizer and write traces and a summary.
    Optimize {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `out` in the config).
        #[arg(long, env = "QMLOPT_OUT")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        /// Worker threads (overrides `jobs` in the config).
        #[arg(long, env = "QMLOPT_JOBS")]
        jobs: Option<usize>,
        /// `qml` or `q-baseline`.
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// Make this replication fail on purpose; repeatable.
        #[arg(long = "inject-fault", value_name = "REP")]
        inject_faults: Vec<usize>,
    },
    /// Monte Carlo check of the sectioning variance and covariance estimators
    /// against their standard normal asymptotic constants.
    ValidateEstimators {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "QMLOPT_JOBS")]
        jobs: Option<usize>,
    },
    /// Average the per-replication traces in a directory into tidy CSVs.
    ExportPlotdata {
        /// Directory written by `optimize`.
        dir: PathBuf,
        /// Where to write the CSVs; defaults to `dir`.
        #[arg(long, env = "QMLOPT_OUT")]
        out: Option<PathBuf>,
    },
    /// Print the full default configuration as TOML.
    Defaults,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Optimize { config, out, seed, reps, jobs, algorithm, inject_faults } => {
            let mut cfg = load_or_default(config.as_deref())?;
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            if let Some(s) = seed {
                cfg.optimizer.seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(j) = jobs {
                cfg.jobs = Some(j);
            }
            if let Some(a) = algorithm {
                cfg.optimizer.algorithm = a;
            }
            cfg.inject_faults.extend(inject_faults);
            optimize(&cfg)
        }
        Command::ValidateEstimators { config, seed, jobs } => {
            let mut cfg = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.estimators.seed = s;
            }
            if let Some(j) = jobs {
                cfg.jobs = Some(j);
            }
            validate_estimators(&cfg)
        }
        Command::ExportPlotdata { dir, out } => export_plotdata(&dir, out.as_deref().unwrap_or(&dir)),
        Command::Defaults => {
            print!("{}", RunConfig::default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_or_default(path: Option<&Path>) -> Result<RunConfig, CliError> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn optimize(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    cfg.optimizer.validate(problem.dim()).map_err(|e| CliError::config(format!("optimizer: {e}")))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::config("out: no output directory (set `out`, --out or QMLOPT_OUT)"))?;
    std::fs::create_dir_all(&out).map_err(CliError::io(format!("creating {}", out.display())))?;

    let started = unix_now();
    let clock = Instant::now();
    let settings = cfg.macro_settings();
    let summary = with_jobs(cfg.jobs, || bench::run_macro(&cfg.optimizer, &problem, &settings, Some(&out)))?;
    let elapsed = clock.elapsed().as_secs_f64();

    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(CliError::io("writing config.toml"))?;
    let meta = serde_json::json!({
        "command": "optimize",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": summary.config_hash,
        "started_unix": started,
        "finished_unix": unix_now(),
        "elapsed_seconds": elapsed,
    });
    std::fs::write(out.join("meta.json"), format!("{meta:#}\n")).map_err(CliError::io("writing meta.json"))?;

    report(&summary, &out);
    Ok(if summary.is_partial() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn report(s: &Summary, out: &Path) {
    println!("problem {} / {}: {}/{} replications completed", s.problem, s.algorithm, s.completed, s.requested_reps);
    for f in &s.failures {
        println!("  replication {} failed: {}", f.rep, f.error);
    }
    println!("true-selection frequency  {:.3}", s.true_selection_frequency);
    match s.mean_s99 {
        Some(v) => println!("S_0.99 reached             {}/{} (mean {v:.1} evaluations)", s.s99_hits, s.completed),
        None => println!("S_0.99 reached             0/{}", s.completed),
    }
    println!("initial prediction RMSE   {:.4}", s.mean_pred_error);
    println!("mean final true quantile  {:.4}", s.mean_final_v_true);
    println!("results in {}", out.display());
}

fn validate_estimators(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    cfg.validate()?;
    let check = &cfg.estimators;
    let report = with_jobs(cfg.jobs, || check.run(cfg.parallelism()))?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let var_ok = (report.variance_ratio() - 1.0).abs() <= 0.10;
    let cov_ok = (report.covariance_ratio() - 1.0).abs() <= 0.15;
    let (a1, a2) = check.covariance_levels;
    println!("{} panels of n = {}, {} batches", check.panels, check.n, check.n_b);
    println!(
        "variance   level {}: n*mean = {:.4}, oracle {:.4}, ratio {:.4} (tolerance 0.10)  {}",
        check.variance_level,
        report.scaled_variance,
        report.variance_oracle,
        report.variance_ratio(),
        verdict(var_ok)
    );
    println!(
        "covariance levels {a1}/{a2}: n*mean = {:.4}, oracle {:.4}, ratio {:.4} (tolerance 0.15)  {}",
        report.scaled_covariance,
        report.covariance_oracle,
        report.covariance_ratio(),
        verdict(cov_ok)
    );
    if report.low_confidence_panels > 0 {
        println!(
            "warning: {} of {} panels are low confidence (too few batches or samples per batch)",
            report.low_confidence_panels, check.panels
        );
    }
    Ok(if var_ok && cov_ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn export_plotdata(dir: &Path, out: &Path) -> Result<ExitCode, CliError> {
    if !dir.is_dir() {
        return Err(CliError::config(format!("{} is not a directory", dir.display())));
    }
    let records = bench::load_records(dir)?;
    if records.is_empty() {
        return Err(CliError::config(format!("no rep_NNN.json traces in {}", dir.display())));
    }
    let data = bench::plot_data(&records)?;
    std::fs::create_dir_all(out).map_err(CliError::io(format!("creating {}", out.display())))?;
    for (name, body) in [
        ("g_curve.csv", &data.g_curve),
        ("best_so_far.csv", &data.best_so_far),
        ("allocation_histogram.csv", &data.allocation_histogram),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(CliError::io(format!("writing {}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
