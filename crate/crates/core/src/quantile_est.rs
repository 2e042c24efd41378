//! Order-statistic quantile estimates and sectioning noise estimates.
//!
//! A [`QuantilePanel`] summarizes the raw replications at one design point:
//! the full-sample quantile for every modeled level, plus the sectioning
//! estimate of the estimators' noise covariance across levels.

use serde::{Deserialize, Serialize};

use crate::exec::{self, Parallelism};
use crate::sim_core::RngStream;
use crate::{normal, Error, Result};

/// Default number of sectioning batches.
pub const DEFAULT_BATCHES: usize = 10;

/// 1-based order-statistic index `floor(alpha * n)` clamped into `[1, n]`,
/// and whether clamping was needed.
fn order_index(n: usize, alpha: f64) -> (usize, bool) {
    // The small offset keeps products like 0.6 * 10 from landing a ulp below
    // an integer.
    let raw = (alpha * n as f64 + 1e-9).floor() as usize;
    if raw < 1 {
        (1, true)
    } else if raw > n {
        (n, true)
    } else {
        (raw, false)
    }
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The `floor(alpha * n)`-th order statistic of `samples` (1-based, clamped).
pub fn empirical_quantile(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("empirical quantile of an empty sample"));
    }
    let sorted = sorted_copy(samples);
    Ok(sorted[order_index(sorted.len(), alpha).0 - 1])
}

/// Quantile point estimates and sectioning noise covariance at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePanel {
    pub levels: Vec<f64>,
    pub point_estimates: Vec<f64>,
    /// Symmetric `m x m` estimate of `cov(eps_j(x), eps_k(x))`.
    pub noise_cov: Vec<Vec<f64>>,
    pub n_used: usize,
    pub n_b: usize,
    pub n_c: usize,
    /// Only two batches, or some batch quantile index had to be clamped
    /// (batches too small for the requested levels).
    pub low_confidence: bool,
}

impl QuantilePanel {
    pub fn var(&self, level: usize) -> f64 {
        self.noise_cov[level][level]
    }

    pub fn cov(&self, j: usize, k: usize) -> f64 {
        self.noise_cov[j][k]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Build a panel from the raw samples at one point.
///
/// The first `n_b * n_c` samples (in stream order) are split into `n_b`
/// consecutive batches of `n_c = floor(n / n_b)`; the remainder only enters
/// the full-sample point estimates.
pub fn sectioning_panel(samples: &[f64], levels: &[f64], n_b: usize) -> Result<QuantilePanel> {
    if n_b < 2 {
        return Err(Error::arg("sectioning needs at least 2 batches"));
    }
    if levels.is_empty() {
        return Err(Error::arg("at least one quantile level is required"));
    }
    if levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::arg("quantile levels must lie in (0, 1)"));
    }
    let n = samples.len();
    let n_c = n / n_b;
    if n_c < 1 {
        return Err(Error::arg(format!("{n} samples cannot fill {n_b} batches")));
    }
    let m = levels.len();
    let full = sorted_copy(samples);
    let point_estimates: Vec<f64> = levels.iter().map(|a| full[order_index(n, *a).0 - 1]).collect();

    let mut low_confidence = n_b == 2;
    let mut deviations = vec![vec![0.0; m]; n_b];
    for (b, chunk) in samples.chunks_exact(n_c).take(n_b).enumerate() {
        let sorted = sorted_copy(chunk);
        for (j, a) in levels.iter().enumerate() {
            let (idx, clamped) = order_index(n_c, *a);
            low_confidence |= clamped;
            deviations[b][j] = sorted[idx - 1] - point_estimates[j];
        }
    }

    let scale = 1.0 / (n_b as f64 * (n_b as f64 - 1.0));
    let mut noise_cov = vec![vec![0.0; m]; m];
    for j in 0..m {
        for k in j..m {
            let s: f64 = deviations.iter().map(|dev| dev[j] * dev[k]).sum::<f64>() * scale;
            noise_cov[j][k] = s;
            noise_cov[k][j] = s;
        }
    }
    Ok(QuantilePanel {
        levels: levels.to_vec(),
        point_estimates,
        noise_cov,
        n_used: n,
        n_b,
        n_c,
        low_confidence,
    })
}

/// `lim n cov(Y_1, Y_2)` for sample quantiles of a standard normal,
/// `alpha1 (1 - alpha2) / (phi(z1) phi(z2))` with `alpha1 <= alpha2`.
/// With equal levels this is the asymptotic variance `alpha (1 - alpha) / phi(z)^2`.
pub fn normal_asymptotic_cov(alpha1: f64, alpha2: f64) -> f64 {
    let (lo, hi) = if alpha1 <= alpha2 { (alpha1, alpha2) } else { (alpha2, alpha1) };
    lo * (1.0 - hi) / (normal::pdf(normal::quantile(lo)) * normal::pdf(normal::quantile(hi)))
}

/// Settings for the Monte Carlo check of the sectioning estimators against
/// the standard normal asymptotic constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorCheck {
    pub n: usize,
    pub panels: usize,
    pub n_b: usize,
    pub variance_level: f64,
    pub covariance_levels: (f64, f64),
    pub seed: u64,
}

impl Default for EstimatorCheck {
    fn default() -> Self {
        EstimatorCheck {
            n: 10_000,
            panels: 500,
            n_b: DEFAULT_BATCHES,
            variance_level: 0.5,
            covariance_levels: (0.6, 0.95),
            seed: 20_180_101,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// `n * mean(variance estimate)` at `variance_level`.
    pub scaled_variance: f64,
    pub variance_oracle: f64,
    /// `n * mean(covariance estimate)` between `covariance_levels`.
    pub scaled_covariance: f64,
    pub covariance_oracle: f64,
    /// Mean squared error of the raw covariance estimate around `oracle / n`.
    pub covariance_mse: f64,
    pub low_confidence_panels: usize,
}

impl EstimatorReport {
    pub fn variance_ratio(&self) -> f64 {
        self.scaled_variance / self.variance_oracle
    }

    pub fn covariance_ratio(&self) -> f64 {
        self.scaled_covariance / self.covariance_oracle
    }
}

impl EstimatorCheck {
    pub fn run(&self, mode: Parallelism) -> Result<EstimatorReport> {
        let (a1, a2) = self.covariance_levels;
        let levels = [self.variance_level, a1, a2];
        let panels: Vec<Result<QuantilePanel>> = exec::map_range(mode, self.panels, |i| {
            let z = RngStream::new(self.seed, i as u64).standard_normals(self.n);
            sectioning_panel(&z, &levels, self.n_b)
        });
        let panels = panels.into_iter().collect::<Result<Vec<_>>>()?;
        let nf = self.n as f64;
        let count = panels.len() as f64;
        let covariance_oracle = normal_asymptotic_cov(a1, a2);
        let target = covariance_oracle / nf;
        Ok(EstimatorReport {
            scaled_variance: nf * panels.iter().map(|p| p.var(0)).sum::<f64>() / count,
            variance_oracle: normal_asymptotic_cov(self.variance_level, self.variance_level),
            scaled_covariance: nf * panels.iter().map(|p| p.cov(1, 2)).sum::<f64>() / count,
            covariance_oracle,
            covariance_mse: panels.iter().map(|p| (p.cov(1, 2) - target).powi(2)).sum::<f64>() / count,
            low_confidence_panels: panels.iter().filter(|p| p.low_confidence).count(),
        })
    }
}
