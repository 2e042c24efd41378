use std::path::{Path, PathBuf};

use qmlopt_core::bench::MacroSettings;
use qmlopt_core::exec::Parallelism;
use qmlopt_core::optimizer::OptimizerConfig;
use qmlopt_core::quantile_est::EstimatorCheck;
use qmlopt_core::sim_core::{GridTable, LossProblem, NoiseFamily, ProblemId};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Tabulated loss for `id = "custom"`: multilinear mean and noise scale on
/// a shared tensor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTables {
    pub axes: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub family: NoiseFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    /// `fig1`, `exp1`, `exp2`, `ackley-logn`, `rastrigin-logn`,
    /// `levy-logn` or `custom`.
    pub id: String,
    /// Dimension of the lognormal test losses.
    pub dim: usize,
    /// Replace the location-dependent noise scale by a constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomTables>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec { id: "exp1".into(), dim: 2, noise_scale: None, custom: None }
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<LossProblem, CliError> {
        let id: ProblemId = self.id.parse().map_err(|e| CliError::config(format!("problem.id: {e}")))?;
        let problem = match id {
            ProblemId::Custom => {
                let t = self
                    .custom
                    .as_ref()
                    .ok_or_else(|| CliError::config("problem.custom: required when problem.id = \"custom\""))?;
                let table = |values: &[f64]| {
                    GridTable::new(t.axes.clone(), values.to_vec())
                        .map_err(|e| CliError::config(format!("problem.custom: {e}")))
                };
                LossProblem::custom(table(&t.mean)?, table(&t.scale)?, t.family)
                    .map_err(|e| CliError::config(format!("problem.custom: {e}")))?
            }
            other => {
                if self.dim == 0 {
                    return Err(CliError::config("problem.dim: must be positive"));
                }
                LossProblem::builtin(other, self.dim).map_err(|e| CliError::config(format!("problem: {e}")))?
            }
        };
        match self.noise_scale {
            Some(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(CliError::config("problem.noise_scale: must be finite and non-negative"))
            }
            Some(s) => Ok(problem.with_constant_scale(s)),
            None => Ok(problem),
        }
    }
}

/// Everything one experiment needs, read from a single TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// Macro-replications.
    pub reps: usize,
    /// Output directory for traces and the summary.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads; unset uses all cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Use the data-parallel code paths.
    pub parallel: bool,
    /// Replications that fail on purpose, for exercising partial runs.
    pub inject_faults: Vec<usize>,
    pub selection_tolerance: f64,
    pub holdout_points: usize,
    pub optimizer: OptimizerConfig,
    pub estimators: EstimatorCheck,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MacroSettings::default();
        RunConfig {
            problem: ProblemSpec::default(),
            reps: m.reps,
            out: None,
            jobs: None,
            parallel: true,
            inject_faults: m.inject_faults,
            selection_tolerance: m.selection_tolerance,
            holdout_points: m.holdout_points,
            optimizer: OptimizerConfig::default(),
            estimators: EstimatorCheck::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.to_string().trim_end())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.parallel {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }

    pub fn macro_settings(&self) -> MacroSettings {
        MacroSettings {
            reps: self.reps,
            inject_faults: self.inject_faults.clone(),
            selection_tolerance: self.selection_tolerance,
            holdout_points: self.holdout_points,
            parallelism: self.parallelism(),
        }
    }

    /// Checks that do not need the problem dimension.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps == 0 {
            return Err(CliError::config("reps: at least one replication is required"));
        }
        if self.jobs == Some(0) {
            return Err(CliError::config("jobs: must be positive"));
        }
        if !(self.selection_tolerance > 0.0) {
            return Err(CliError::config("selection_tolerance: must be positive"));
        }
        if self.holdout_points == 0 {
            return Err(CliError::config("holdout_points: must be positive"));
        }
        Ok(())
    }
}
