//! Multi-level stochastic co-kriging.
//!
//! Level `l` (0-based, ordered by quantile level) is modeled as
//! `Z_l(x) = rho_{l-1} Z_{l-1}(x) + delta_l(x)` with independent stationary
//! Gaussian processes `delta_l` (constant trend `beta_l`, variance
//! `sigma2_l`, Gaussian correlation with per-axis sensitivities `theta_l`).
//! Observations are `Z_l(x) + eps_l(x)` where the noise covariance across
//! levels at the same point comes from sectioning and is treated as known.
//!
//! Unrolling the recursion, `Z_l = sum_{j<=l} c_{l,j} delta_j` with
//! `c_{l,j} = rho_j * ... * rho_{l-1}` (and `c_{l,l} = 1`); every covariance
//! block below is expressed through these coefficients.

mod dump;
mod fit;
mod likelihood;
mod model;

pub use dump::{ModelDump, MODEL_DUMP_SCHEMA};
pub use fit::{crossing_penalty, fit, Bounds, FitOptions, FitReport, PenaltySearch};
pub use likelihood::{decomposed_loglik, loglik};
pub use model::{assemble, gaussian_corr, AssembledModel, Prediction};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::quantile_est::QuantilePanel;
use crate::{Error, Result};

/// Co-kriging hyperparameters for `m` levels in `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Autoregressive scales, `rho[l]` links level `l` to level `l + 1`.
    pub rho: Vec<f64>,
    /// Per-level correlation sensitivities, `corr = exp(-sum (dx_j^2 / theta_j))`.
    pub theta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    /// GLS trend estimates, filled in by assembly; ignored as an input.
    #[serde(default)]
    pub beta: Vec<f64>,
}

impl Hyperparams {
    pub fn num_levels(&self) -> usize {
        self.sigma2.len()
    }

    pub fn validate(&self, m: usize, d: usize) -> Result<()> {
        if self.sigma2.len() != m || self.theta.len() != m || self.rho.len() + 1 != m {
            return Err(Error::arg(format!("hyperparameters do not describe {m} levels")));
        }
        if self.theta.iter().any(|t| t.len() != d) {
            return Err(Error::arg(format!("theta vectors must have length {d}")));
        }
        if self.sigma2.iter().chain(self.theta.iter().flatten()).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::arg("theta and sigma2 must be strictly positive"));
        }
        if self.rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::arg("rho must be finite"));
        }
        Ok(())
    }

    /// `c[l][j]` = product of `rho[j..l]`, zero above the diagonal.
    pub(crate) fn chain_coefficients(&self) -> DMatrix<f64> {
        let m = self.num_levels();
        DMatrix::from_fn(m, m, |l, j| if j > l { 0.0 } else { self.rho[j..l].iter().product() })
    }
}

/// Point estimates and noise covariances for the modeled levels at a shared
/// design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInputs {
    pub design: Vec<Vec<f64>>,
    /// Quantile level of each modeled level, increasing.
    pub levels: Vec<f64>,
    /// `estimates[l][i]` is the level-`l` estimate at `design[i]`.
    pub estimates: Vec<Vec<f64>>,
    /// `noise[i]` is the `m x m` noise covariance at `design[i]`.
    pub noise: Vec<Vec<Vec<f64>>>,
}

impl ModelInputs {
    pub fn new(
        design: Vec<Vec<f64>>,
        levels: Vec<f64>,
        estimates: Vec<Vec<f64>>,
        noise: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let inputs = ModelInputs { design, levels, estimates, noise };
        inputs.validate()?;
        Ok(inputs)
    }

    /// Noise-free inputs (`R_eps = 0`).
    pub fn noiseless(design: Vec<Vec<f64>>, levels: Vec<f64>, estimates: Vec<Vec<f64>>) -> Result<Self> {
        let m = levels.len();
        let n = design.len();
        Self::new(design, levels, estimates, vec![vec![vec![0.0; m]; m]; n])
    }

    /// Inputs for the sub-levels `which` (indices into each panel's levels).
    pub fn from_panels(design: &[Vec<f64>], panels: &[QuantilePanel], which: &[usize]) -> Result<Self> {
        if design.len() != panels.len() {
            return Err(Error::arg("one panel per design point is required"));
        }
        let Some(first) = panels.first() else {
            return Err(Error::arg("model inputs need at least one design point"));
        };
        let levels = which.iter().map(|&l| first.levels[l]).collect();
        let estimates = which
            .iter()
            .map(|&l| panels.iter().map(|p| p.point_estimates[l]).collect())
            .collect();
        let noise = panels
            .iter()
            .map(|p| which.iter().map(|&j| which.iter().map(|&k| p.cov(j, k)).collect()).collect())
            .collect();
        Self::new(design.to_vec(), levels, estimates, noise)
    }

    fn validate(&self) -> Result<()> {
        let n = self.design.len();
        let m = self.levels.len();
        if n == 0 || m == 0 {
            return Err(Error::arg("model inputs need at least one point and one level"));
        }
        let d = self.design[0].len();
        if d == 0 || self.design.iter().any(|x| x.len() != d) {
            return Err(Error::arg("design points must share a positive dimension"));
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("levels must be strictly increasing"));
        }
        if self.estimates.len() != m || self.estimates.iter().any(|e| e.len() != n) {
            return Err(Error::arg("every level needs one estimate per design point"));
        }
        if self.noise.len() != n || self.noise.iter().any(|c| c.len() != m || c.iter().any(|r| r.len() != m)) {
            return Err(Error::arg("every design point needs an m x m noise block"));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.design.len()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.design[0].len()
    }

    /// `(Y_1(D), ..., Y_m(D))` stacked level by level.
    pub fn y_stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.num_points() * self.num_levels(), self.estimates.iter().flatten().copied())
    }

    /// Block noise covariance; block `(k, s)` is diagonal over design points.
    pub fn r_eps(&self) -> DMatrix<f64> {
        let n = self.num_points();
        let m = self.num_levels();
        let mut r = DMatrix::zeros(n * m, n * m);
        for (i, block) in self.noise.iter().enumerate() {
            for k in 0..m {
                for s in 0..m {
                    r[(k * n + i, s * n + i)] = block[k][s];
                }
            }
        }
        r
    }

    /// Keep only the levels at positions `which`.
    pub fn select_levels(&self, which: &[usize]) -> Result<Self> {
        Self::new(
            self.design.clone(),
            which.iter().map(|&l| self.levels[l]).collect(),
            which.iter().map(|&l| self.estimates[l].clone()).collect(),
            self.noise
                .iter()
                .map(|c| which.iter().map(|&j| which.iter().map(|&k| c[j][k]).collect()).collect())
                .collect(),
        )
    }
}
