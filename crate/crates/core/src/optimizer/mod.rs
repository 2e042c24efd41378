//! Sequential multi-level quantile optimization.
//!
//! Each iteration runs three stages:
//!
//! 1. **Search**: maximize expected improvement of the guiding level's
//!    predictor (with spatial-only variance) and spend `r0` replications at
//!    the winner.
//! 2. **Allocation**: grow the iteration budget, top every point up to the
//!    replication floor `r_k`, and hand the rest out by OCBA at the guiding
//!    level.
//! 3. **Model update**: recompute the panels, promote levels whose estimates
//!    became accurate, prune redundant intermediate levels and refit the
//!    co-kriging model.
//!
//! The single-level baseline is the same loop with only the objective level.

pub mod alloc;
pub mod levels;
pub mod search;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use alloc::{allocate, largest_remainder, next_budget, ocba_allocate, ocba_weights, rk_floor, update_c0};
pub use levels::{select_levels, update_levels, LevelState};
pub use search::{expected_improvement, propose, SearchOutcome, SearchSettings};

use crate::bench::{RunTrace, TraceHeader, TraceRow};
use crate::cokrige::{self, AssembledModel, FitOptions, FitReport, Hyperparams, ModelDump, ModelInputs};
use crate::design::maximin_lhs;
use crate::exec::Parallelism;
use crate::quantile_est::{sectioning_panel, QuantilePanel, DEFAULT_BATCHES};
use crate::sim_core::{derive_seed, LossProblem, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Multi-level co-kriging guided search.
    #[default]
    Qml,
    /// Single model of the objective level only.
    QBaseline,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Qml => "qml",
            Algorithm::QBaseline => "q-baseline",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qml" => Ok(Algorithm::Qml),
            "q-baseline" | "q" => Ok(Algorithm::QBaseline),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected qml or q-baseline)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Total simulator replications `T`.
    pub total_budget: u64,
    /// Initial design size; `None` uses `max(6, 2d + 2)`.
    pub initial_design_size: Option<usize>,
    /// Replications at every newly selected point.
    pub r0: u64,
    /// Quantile levels, increasing; the last one is the objective.
    pub levels: Vec<f64>,
    /// Initial noise tolerance; `None` uses the largest level-1 noise
    /// variance over the initial design.
    pub c0: Option<f64>,
    /// Replication floor `r_k = r0 + ceil(k^rk_exponent)`.
    pub rk_exponent: f64,
    pub ei_candidates_per_dim: usize,
    pub ei_polish_starts: usize,
    pub ei_polish_evals: usize,
    pub batches: usize,
    /// Use the textbook OCBA best-point weight instead of the printed one.
    pub classical_ocba: bool,
    /// Force the objective level once this many replications were spent
    /// while guided by lower levels.
    pub max_lower_level_budget: Option<u64>,
    /// Pick `r0` and `C0` by leave-one-out checks on the initial design.
    pub calibrate_r0: bool,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub fit: FitOptions,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            total_budget: 1000,
            initial_design_size: None,
            r0: 50,
            levels: vec![0.6, 0.95],
            c0: None,
            rk_exponent: 2.1,
            ei_candidates_per_dim: 200,
            ei_polish_starts: 5,
            ei_polish_evals: 200,
            batches: DEFAULT_BATCHES,
            classical_ocba: false,
            max_lower_level_budget: None,
            calibrate_r0: false,
            algorithm: Algorithm::Qml,
            seed: 1,
            fit: FitOptions::default(),
            parallelism: Parallelism::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn initial_size(&self, dim: usize) -> usize {
        self.initial_design_size.unwrap_or_else(|| (2 * dim + 2).max(6))
    }

    /// Levels the algorithm models: all of them, or the objective only.
    pub fn modeled_levels(&self) -> Vec<f64> {
        match self.algorithm {
            Algorithm::Qml => self.levels.clone(),
            Algorithm::QBaseline => self.levels.last().copied().into_iter().collect(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.levels.is_empty() {
            return bad("levels: at least one quantile level is required".into());
        }
        if self.levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("levels: every level must lie in (0, 1)".into());
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("levels: must be strictly increasing".into());
        }
        if self.batches < 2 {
            return bad("batches: at least 2 batches are needed for noise estimates".into());
        }
        if self.r0 < self.batches as u64 {
            return bad(format!("r0: must be at least batches ({})", self.batches));
        }
        let n0 = self.initial_size(dim);
        if n0 < 2 {
            return bad("initial_design_size: at least 2 points are needed".into());
        }
        if self.r0.saturating_mul(n0 as u64) > self.total_budget {
            return bad(format!("total_budget: {} cannot cover {n0} initial points with r0 = {}", self.total_budget, self.r0));
        }
        if !(self.rk_exponent >= 0.0) {
            return bad("rk_exponent: must be non-negative".into());
        }
        if let Some(c0) = self.c0 {
            if !(c0 > 0.0) {
                return bad("c0: must be positive".into());
            }
        }
        if self.ei_candidates_per_dim == 0 {
            return bad("ei_candidates_per_dim: must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A design point with its raw samples and current panel.
#[derive(Debug, Clone)]
pub struct DesignPoint {
    pub x: Vec<f64>,
    pub samples: Vec<f64>,
    pub stream: RngStream,
    pub panel: QuantilePanel,
}

impl DesignPoint {
    pub fn count(&self) -> u64 {
        self.samples.len() as u64
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub k: usize,
    pub points: Vec<DesignPoint>,
    pub budget_iter: u64,
    pub remaining: u64,
    pub levels: LevelState,
    pub c0: f64,
    pub incumbent: usize,
    pub z_star: f64,
    /// Replications spent while guided by a level below the objective.
    pub spent_below_top: u64,
}

impl OptimizerState {
    pub fn total_replications(&self) -> u64 {
        self.points.iter().map(DesignPoint::count).sum()
    }

    pub fn design(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.x.clone()).collect()
    }

    pub fn panels(&self) -> Vec<QuantilePanel> {
        self.points.iter().map(|p| p.panel.clone()).collect()
    }
}

/// Replication count and tolerance chosen by leave-one-out checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub r0: u64,
    pub c0: f64,
    pub rounds: usize,
    /// Fraction of standardized leave-one-out residuals below 3.
    pub coverage: f64,
}

/// Double `r0` from the configured value until at least 95% of the
/// leave-one-out standardized residuals of the level-1 model on the initial
/// design are below 3 in magnitude (or the budget would not allow another
/// doubling). `C0` is then the largest level-1 noise variance. Uses its own
/// simulation streams and does not draw on the run budget.
pub fn calibrate(config: &OptimizerConfig, problem: &LossProblem) -> Result<Calibration> {
    config.validate(problem.dim())?;
    let levels = config.modeled_levels();
    let n0 = config.initial_size(problem.dim());
    let design = initial_design(config, problem, n0);
    let seed = derive_seed(config.seed, 0xCA11);
    let mut r0 = config.r0;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let panels = design
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let s = problem.simulate(x, r0 as usize, &mut RngStream::new(seed, i as u64))?;
                sectioning_panel(&s, &levels, config.batches)
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs = ModelInputs::from_panels(&design, &panels, &[0])?;
        let opts = FitOptions { parallelism: config.parallelism, ..config.fit.clone() };
        let report = cokrige::fit(&inputs, &problem.domain, &opts)?;
        let mut inside = 0;
        for i in 0..n0 {
            let keep: Vec<usize> = (0..n0).filter(|&j| j != i).collect();
            let sub = ModelInputs::new(
                keep.iter().map(|&j| design[j].clone()).collect(),
                inputs.levels.clone(),
                vec![keep.iter().map(|&j| inputs.estimates[0][j]).collect()],
                keep.iter().map(|&j| inputs.noise[j].clone()).collect(),
            )?;
            let model = cokrige::assemble(&sub, &report.hyper)?;
            let p = model.predict(0, &design[i])?;
            let sd = (p.var_full + inputs.noise[i][0][0]).sqrt();
            let z = (inputs.estimates[0][i] - p.mean) / sd.max(f64::MIN_POSITIVE);
            if z.abs() < 3.0 {
                inside += 1;
            }
        }
        let coverage = inside as f64 / n0 as f64;
        let c0 = panels.iter().map(|p| p.var(0)).fold(0.0, f64::max);
        let can_double = 2 * r0 * n0 as u64 <= config.total_budget;
        if coverage >= 0.95 || !can_double {
            return Ok(Calibration { r0, c0, rounds, coverage });
        }
        r0 *= 2;
    }
}

fn initial_design(config: &OptimizerConfig, problem: &LossProblem, n0: usize) -> Vec<Vec<f64>> {
    maximin_lhs(n0, problem.dim(), derive_seed(config.seed, 0xD0), 20)
        .iter()
        .map(|u| problem.domain.from_unit(u))
        .collect()
}

/// The sequential optimizer. [`Optimizer::new`] performs the initialization
/// (design, replications, first model); [`Optimizer::step`] runs one
/// iteration.
pub struct Optimizer<'a> {
    config: OptimizerConfig,
    problem: &'a LossProblem,
    levels: Vec<f64>,
    state: OptimizerState,
    model: AssembledModel,
    last_fit: FitReport,
    initial_model: ModelDump,
    previous_fits: BTreeMap<Vec<usize>, Hyperparams>,
    header: TraceHeader,
    rows: Vec<TraceRow>,
}

impl<'a> Optimizer<'a> {
    pub fn new(config: &OptimizerConfig, problem: &'a LossProblem) -> Result<Self> {
        let mut config = config.clone();
        config.validate(problem.dim())?;
        let mut calibrated_c0 = None;
        if config.calibrate_r0 {
            let cal = calibrate(&config, problem)?;
            config.r0 = cal.r0;
            calibrated_c0 = Some(cal.c0);
            config.validate(problem.dim())?;
        }
        let levels = config.modeled_levels();
        let n0 = config.initial_size(problem.dim());
        let design = initial_design(&config, problem, n0);
        let points = design
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut stream = RngStream::new(config.seed, i as u64);
                let samples = problem.simulate(&x, config.r0 as usize, &mut stream)?;
                let panel = sectioning_panel(&samples, &levels, config.batches)?;
                Ok(DesignPoint { x, samples, stream, panel })
            })
            .collect::<Result<Vec<_>>>()?;
        let c0 = config
            .c0
            .or(calibrated_c0)
            .unwrap_or_else(|| points.iter().map(|p| p.panel.var(0)).fold(0.0, f64::max));
        let remaining = config.total_budget - config.r0 * n0 as u64;
        let mut state = OptimizerState {
            k: 0,
            points,
            budget_iter: 0,
            remaining,
            levels: LevelState::initial(levels.len()),
            c0,
            incumbent: 0,
            z_star: f64::INFINITY,
            spent_below_top: 0,
        };
        state.incumbent = incumbent(&state.points);

        let mut previous_fits = BTreeMap::new();
        let (model, last_fit) = fit_model(&config, problem, &state, &previous_fits, 0)?;
        previous_fits.insert(state.levels.pi.clone(), last_fit.hyper.clone());
        state.z_star = z_star(&model, &state);
        let initial_model = ModelDump::from_model(&model);

        let inc = &state.points[state.incumbent];
        let objective = *levels.last().expect("validated");
        let header = TraceHeader {
            config_hash: config.hash(),
            seed: config.seed,
            problem: problem.id.as_str().to_string(),
            algorithm: config.algorithm.as_str().to_string(),
            levels: levels.clone(),
            total_budget: config.total_budget,
            initial_design: state.design(),
            initial_evals: state.total_replications(),
            initial_xhat: inc.x.clone(),
            initial_y_hat: *inc.panel.point_estimates.last().expect("levels"),
            initial_v_true: problem.true_quantile(&inc.x, objective)?,
            initial_c0: c0,
        };
        Ok(Optimizer {
            config,
            problem,
            levels,
            state,
            model,
            last_fit,
            initial_model,
            previous_fits,
            header,
            rows: Vec::new(),
        })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn model(&self) -> &AssembledModel {
        &self.model
    }

    pub fn last_fit(&self) -> &FitReport {
        &self.last_fit
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn is_finished(&self) -> bool {
        self.state.remaining < self.config.r0 || self.state.remaining == 0
    }

    /// Run one iteration; `None` once the remaining budget cannot fund a new
    /// point.
    pub fn step(&mut self) -> Result<Option<&TraceRow>> {
        if self.is_finished() {
            return Ok(None);
        }
        let config = &self.config;
        let state = &mut self.state;
        let k = state.k + 1;
        let mut flags = Vec::new();
        let remaining_before = state.remaining;
        let top = self.levels.len() - 1;
        let h = state.levels.h;

        // Searching stage.
        let level_in_model = state.levels.pi.len() - 1;
        let settings = SearchSettings {
            candidates: config.ei_candidates_per_dim * self.problem.dim(),
            polish_starts: config.ei_polish_starts,
            polish_evals: config.ei_polish_evals,
            seed: derive_seed(config.seed, 0xE1_0000 + k as u64),
            parallelism: config.parallelism,
        };
        let found = propose(&self.model, level_in_model, state.z_star, &self.problem.domain, &settings)?;
        if found.fallback {
            flags.push("exploration-fallback".to_string());
        }
        let index = state.points.len() as u64;
        let mut stream = RngStream::new(config.seed, index);
        let samples = self.problem.simulate(&found.x, config.r0 as usize, &mut stream)?;
        let panel = sectioning_panel(&samples, &self.levels, config.batches)?;
        state.points.push(DesignPoint { x: found.x.clone(), samples, stream, panel });

        // Allocation stage.
        let floor = rk_floor(config.r0, k, config.rk_exponent);
        let counts: Vec<u64> = state.points.iter().map(DesignPoint::count).collect();
        // The new point's initial replications are part of this iteration's
        // budget, so its deficit is counted from zero.
        let deficit: u64 =
            alloc::deficits(&counts, floor).iter().sum::<u64>() + floor.min(config.r0);
        let max_var = state.points.iter().map(|p| p.panel.var(h)).fold(0.0, f64::max);
        let raw = next_budget(k, state.budget_iter, deficit, max_var, found.var_spatial, config.r0);
        let budget = alloc::clip_budget(raw, remaining_before, config.r0);
        let estimates: Vec<f64> = state.points.iter().map(|p| p.panel.point_estimates[h]).collect();
        let variances: Vec<f64> = state.points.iter().map(|p| p.panel.var(h)).collect();
        let plan = allocate(&counts, floor, &estimates, &variances, budget - config.r0, config.classical_ocba);
        if plan.short {
            flags.push("replication-floor-shortfall".to_string());
        }
        for (p, &extra) in state.points.iter_mut().zip(&plan.per_point) {
            if extra > 0 {
                let more = self.problem.simulate(&p.x, extra as usize, &mut p.stream)?;
                p.samples.extend(more);
                p.panel = sectioning_panel(&p.samples, &self.levels, config.batches)?;
            }
        }
        let mut allocation = plan.per_point;
        *allocation.last_mut().expect("new point") += config.r0;
        state.budget_iter = budget;
        state.remaining = remaining_before - budget;
        if h < top {
            state.spent_below_top += budget;
        }
        state.k = k;

        // Model update.
        state.incumbent = incumbent(&state.points);
        let inc = &state.points[state.incumbent];
        state.c0 = update_c0(
            state.c0,
            inc.panel.var(top),
            inc.count(),
            state.remaining,
            state.points.len(),
            budget,
        );
        let variances: Vec<Vec<f64>> =
            state.points.iter().map(|p| (0..=top).map(|l| p.panel.var(l)).collect()).collect();
        state.levels = update_levels(&variances, state.c0, h);
        if let Some(cap) = config.max_lower_level_budget {
            if state.spent_below_top >= cap && state.levels.h < top {
                state.levels.h = top;
                state.levels.pi = select_levels(&state.levels.accept, top);
                flags.push("effort-cap-promotion".to_string());
            }
        }

        let mut refreshed = false;
        for attempt in 0..3 {
            match fit_model(config, self.problem, state, &self.previous_fits, attempt) {
                Ok((model, report)) => {
                    if report.flagged {
                        flags.push("crossing-audit-failed".to_string());
                    }
                    self.previous_fits.insert(state.levels.pi.clone(), report.hyper.clone());
                    self.model = model;
                    self.last_fit = report;
                    refreshed = true;
                    break;
                }
                Err(_) => flags.push(format!("fit-retry-{}", attempt + 1)),
            }
        }
        if refreshed {
            state.z_star = z_star(&self.model, state);
        } else {
            // Keep guiding with the last model; its levels stay in force.
            flags.push("model-refresh-skipped".to_string());
            let model_levels: Vec<usize> =
                self.model.inputs.levels.iter().map(|a| self.levels.iter().position(|b| b == a).unwrap_or(0)).collect();
            state.levels.h = *model_levels.last().unwrap_or(&0);
            state.levels.pi = model_levels;
        }

        let inc = &state.points[state.incumbent];
        let objective = self.levels[top];
        let row = TraceRow {
            k,
            x_next: found.x,
            allocation,
            h: state.levels.h + 1,
            pi: state.levels.pi.iter().map(|l| l + 1).collect(),
            budget,
            remaining: state.remaining,
            evals: config.total_budget - state.remaining,
            xhat: inc.x.clone(),
            y_hat: inc.panel.point_estimates[top],
            v_true: self.problem.true_quantile(&inc.x, objective)?,
            c0: state.c0,
            flags,
        };
        self.rows.push(row);
        Ok(self.rows.last())
    }

    /// Finish the run and assemble the trace.
    pub fn into_trace(self) -> Result<RunTrace> {
        let top = self.levels.len() - 1;
        let inc = &self.state.points[self.state.incumbent];
        Ok(RunTrace {
            final_x: inc.x.clone(),
            final_y_hat: inc.panel.point_estimates[top],
            final_v_true: self.problem.true_quantile(&inc.x, self.levels[top])?,
            header: self.header,
            rows: self.rows,
            initial_model: self.initial_model,
        })
    }
}

fn incumbent(points: &[DesignPoint]) -> usize {
    let ys: Vec<f64> = points.iter().map(|p| *p.panel.point_estimates.last().expect("levels")).collect();
    alloc::argmin(&ys)
}

fn z_star(model: &AssembledModel, state: &OptimizerState) -> f64 {
    let level = model.num_levels() - 1;
    state
        .points
        .iter()
        .map(|p| model.predict_mean(level, &p.x).unwrap_or(f64::INFINITY))
        .fold(f64::INFINITY, f64::min)
}

fn fit_model(
    config: &OptimizerConfig,
    problem: &LossProblem,
    state: &OptimizerState,
    previous: &BTreeMap<Vec<usize>, Hyperparams>,
    attempt: usize,
) -> Result<(AssembledModel, FitReport)> {
    let design = state.design();
    let inputs = ModelInputs::from_panels(&design, &state.panels(), &state.levels.pi)?;
    let mut opts = FitOptions {
        seed: derive_seed(config.fit.seed ^ config.seed, (state.k * 4 + attempt) as u64),
        parallelism: config.parallelism,
        previous: previous.get(&state.levels.pi).cloned(),
        ..config.fit.clone()
    };
    if attempt > 0 {
        opts.lambda = opts.lambda.map(|l| l * 10f64.powi(attempt as i32));
    }
    let report = cokrige::fit(&inputs, &problem.domain, &opts)?;
    let model = cokrige::assemble(&inputs, &report.hyper)?;
    Ok((model, report))
}

/// Run the optimizer to completion, handing each finished row to `observe`.
pub fn run_with(
    config: &OptimizerConfig,
    problem: &LossProblem,
    mut observe: impl FnMut(&TraceRow),
) -> Result<RunTrace> {
    let mut opt = Optimizer::new(config, problem)?;
    while let Some(row) = opt.step()? {
        observe(row);
    }
    opt.into_trace()
}

pub fn run(config: &OptimizerConfig, problem: &LossProblem) -> Result<RunTrace> {
    run_with(config, problem, |_| {})
}
