use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Hyperparams, ModelInputs};
use crate::{Error, Result};

/// Relative diagonal jitter ladder (fractions of the mean diagonal).
const JITTER_LADDER: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Gaussian correlation `exp(-sum_j (a_j - b_j)^2 / theta_j)`.
pub fn gaussian_corr(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(theta).map(|((x, y), t)| (x - y) * (x - y) / t).sum();
    (-s).exp()
}

fn correlation_matrix(design: &[Vec<f64>], theta: &[f64]) -> DMatrix<f64> {
    let n = design.len();
    let mut a = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let c = gaussian_corr(&design[i], &design[j], theta);
            a[(i, j)] = c;
            a[(j, i)] = c;
        }
    }
    a
}

/// Spatial covariance `R_z` and trend matrix `H` for stacked levels.
pub(crate) fn spatial_blocks(inputs: &ModelInputs, hyper: &Hyperparams, coef: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = inputs.num_points();
    let m = inputs.num_levels();
    let corr: Vec<DMatrix<f64>> = hyper.theta.iter().map(|t| correlation_matrix(&inputs.design, t)).collect();
    let mut r_z = DMatrix::zeros(n * m, n * m);
    for k in 0..m {
        for s in 0..=k {
            let mut block = DMatrix::zeros(n, n);
            for j in 0..=s {
                let w = hyper.sigma2[j] * coef[(k, j)] * coef[(s, j)];
                if w != 0.0 {
                    block += &corr[j] * w;
                }
            }
            r_z.view_mut((k * n, s * n), (n, n)).copy_from(&block);
            if k != s {
                r_z.view_mut((s * n, k * n), (n, n)).copy_from(&block.transpose());
            }
        }
    }
    let mut h = DMatrix::zeros(n * m, m);
    for k in 0..m {
        for s in 0..=k {
            h.view_mut((k * n, s), (n, 1)).fill(coef[(k, s)]);
        }
    }
    (r_z, h)
}

pub(crate) fn factorize(mat: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let dim = mat.nrows();
    let mean_diag = (0..dim).map(|i| mat[(i, i)]).sum::<f64>() / dim.max(1) as f64;
    if !mean_diag.is_finite() || mean_diag <= 0.0 {
        return Err(Error::Fitting("covariance has non-positive diagonal".into()));
    }
    for rel in JITTER_LADDER {
        let jitter = rel * mean_diag;
        let mut m = mat.clone();
        if jitter > 0.0 {
            for i in 0..dim {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, jitter));
        }
    }
    Err(Error::Fitting("covariance is not positive definite after maximal jitter".into()))
}

/// Everything derived from one SPD covariance (`R` or `R_z`) needed for GLS
/// trend estimation, likelihood and kriging.
#[derive(Debug, Clone)]
pub(crate) struct Solver {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    /// `R^-1 H`
    pub rinv_h: DMatrix<f64>,
    /// Factorization of `H^T R^-1 H`.
    pub gram: Cholesky<f64, Dyn>,
    pub beta: DVector<f64>,
    pub resid: DVector<f64>,
    /// `R^-1 (Y - H beta)`
    pub alpha: DVector<f64>,
    pub log_det: f64,
}

impl Solver {
    pub fn new(cov: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (chol, jitter) = factorize(cov)?;
        let rinv_h = chol.solve(h);
        let gram_m = h.transpose() * &rinv_h;
        let gram = Cholesky::new(gram_m).ok_or_else(|| Error::Fitting("trend Gram matrix is singular".into()))?;
        let rinv_y = chol.solve(y);
        let beta = gram.solve(&(h.transpose() * &rinv_y));
        let resid = y - h * &beta;
        let alpha = chol.solve(&resid);
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Solver { chol, jitter, rinv_h, gram, beta, resid, alpha, log_det })
    }

    pub fn loglik(&self) -> f64 {
        -0.5 * self.log_det - 0.5 * self.resid.dot(&self.alpha)
    }

    /// `sigma2 prior - t^T R^-1 t + zeta^T (H^T R^-1 H)^-1 zeta`.
    fn variance(&self, prior: f64, t: &DVector<f64>, h_row: &DVector<f64>) -> f64 {
        let v = self.chol.solve(t);
        let zeta = h_row - self.rinv_h.transpose() * t;
        let g = self.gram.solve(&zeta);
        prior - t.dot(&v) + zeta.dot(&g)
    }
}

/// Mean predictor state shared by fitting (no spatial factorization).
#[derive(Debug, Clone)]
pub(crate) struct MeanModel {
    pub hyper: Hyperparams,
    pub coef: DMatrix<f64>,
    pub design: Vec<Vec<f64>>,
    pub solver: Solver,
    /// `g[j] = sum_{s >= j} c_{s,j} alpha_s`, one n-vector per level.
    g: Vec<DVector<f64>>,
}

impl MeanModel {
    pub fn new(inputs: &ModelInputs, hyper: &Hyperparams) -> Result<(Self, DMatrix<f64>, DMatrix<f64>)> {
        hyper.validate(inputs.num_levels(), inputs.dim())?;
        let coef = hyper.chain_coefficients();
        let (r_z, h) = spatial_blocks(inputs, hyper, &coef);
        let r = &r_z + inputs.r_eps();
        let solver = Solver::new(&r, &h, &inputs.y_stacked())?;
        let n = inputs.num_points();
        let m = inputs.num_levels();
        let g = (0..m)
            .map(|j| {
                let mut acc = DVector::zeros(n);
                for s in j..m {
                    acc += solver.alpha.rows(s * n, n) * coef[(s, j)];
                }
                acc
            })
            .collect();
        let mut hyper = hyper.clone();
        hyper.beta = solver.beta.iter().copied().collect();
        Ok((MeanModel { hyper, coef, design: inputs.design.clone(), solver, g }, r_z, h))
    }

    pub fn num_levels(&self) -> usize {
        self.coef.nrows()
    }

    pub fn mean(&self, level: usize, x: &[f64]) -> f64 {
        let mut out = 0.0;
        for j in 0..=level {
            let c = self.coef[(level, j)];
            if c == 0.0 {
                continue;
            }
            let theta = &self.hyper.theta[j];
            let dot: f64 = self
                .design
                .iter()
                .zip(self.g[j].iter())
                .map(|(p, gi)| gaussian_corr(p, x, theta) * gi)
                .sum();
            out += c * (self.solver.beta[j] + self.hyper.sigma2[j] * dot);
        }
        out
    }

    /// Predictor at every level, sharing the correlation vectors.
    pub fn means_all(&self, x: &[f64]) -> Vec<f64> {
        let m = self.num_levels();
        let parts: Vec<f64> = (0..m)
            .map(|j| {
                let theta = &self.hyper.theta[j];
                let dot: f64 = self
                    .design
                    .iter()
                    .zip(self.g[j].iter())
                    .map(|(p, gi)| gaussian_corr(p, x, theta) * gi)
                    .sum();
                self.solver.beta[j] + self.hyper.sigma2[j] * dot
            })
            .collect();
        (0..m).map(|l| (0..=l).map(|j| self.coef[(l, j)] * parts[j]).sum()).collect()
    }

    /// Stacked cross-covariance `t_l(x)` and trend row `h_l(x)`.
    fn cross_cov(&self, level: usize, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let n = self.design.len();
        let m = self.num_levels();
        let corr: Vec<DVector<f64>> = (0..=level)
            .map(|j| DVector::from_iterator(n, self.design.iter().map(|p| gaussian_corr(p, x, &self.hyper.theta[j]))))
            .collect();
        let mut t = DVector::zeros(n * m);
        for s in 0..m {
            let mut block = t.rows_mut(s * n, n);
            for j in 0..=level.min(s) {
                let w = self.hyper.sigma2[j] * self.coef[(s, j)] * self.coef[(level, j)];
                if w != 0.0 {
                    block.axpy(w, &corr[j], 1.0);
                }
            }
        }
        let h_row = DVector::from_fn(m, |s, _| self.coef[(level, s)]);
        (t, h_row)
    }

    fn prior_variance(&self, level: usize) -> f64 {
        (0..=level).map(|j| self.coef[(level, j)].powi(2) * self.hyper.sigma2[j]).sum()
    }
}

/// Kriging output at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Predictive variance with the noise-inclusive covariance `R`.
    pub var_full: f64,
    /// Predictive variance using the spatial covariance `R_z` only; zero at
    /// design points.
    pub var_spatial: f64,
}

/// A co-kriging model with fixed hyperparameters, ready for prediction.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub inputs: ModelInputs,
    pub r_z: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub h_matrix: DMatrix<f64>,
    mean_model: MeanModel,
    spatial: Solver,
}

/// Assemble covariance blocks and factorizations for `inputs` under `hyper`.
pub fn assemble(inputs: &ModelInputs, hyper: &Hyperparams) -> Result<AssembledModel> {
    let (mean_model, r_z, h) = MeanModel::new(inputs, hyper)?;
    let spatial = Solver::new(&r_z, &h, &inputs.y_stacked())?;
    let r = &r_z + inputs.r_eps();
    Ok(AssembledModel { inputs: inputs.clone(), r_z, r, h_matrix: h, mean_model, spatial })
}

impl AssembledModel {
    pub fn hyper(&self) -> &Hyperparams {
        &self.mean_model.hyper
    }

    pub fn beta(&self) -> &[f64] {
        self.mean_model.solver.beta.as_slice()
    }

    pub fn num_levels(&self) -> usize {
        self.mean_model.num_levels()
    }

    /// Jitter added to `R` and `R_z` respectively.
    pub fn jitter(&self) -> (f64, f64) {
        (self.mean_model.solver.jitter, self.spatial.jitter)
    }

    pub fn loglik(&self) -> f64 {
        self.mean_model.solver.loglik()
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level < self.num_levels() {
            Ok(())
        } else {
            Err(Error::arg(format!("level {level} out of range for a {}-level model", self.num_levels())))
        }
    }

    /// Predictor only; cheaper than [`AssembledModel::predict`].
    pub fn predict_mean(&self, level: usize, x: &[f64]) -> Result<f64> {
        self.check_level(level)?;
        Ok(self.mean_model.mean(level, x))
    }

    /// Mean and both predictive variances of `Z_level(x)` (0-based level).
    pub fn predict(&self, level: usize, x: &[f64]) -> Result<Prediction> {
        self.check_level(level)?;
        let mm = &self.mean_model;
        let (t, h_row) = mm.cross_cov(level, x);
        let prior = mm.prior_variance(level);
        let clamp = |v: f64| if v < 0.0 { 0.0 } else { v };
        Ok(Prediction {
            mean: mm.mean(level, x),
            var_full: clamp(mm.solver.variance(prior, &t, &h_row)),
            var_spatial: clamp(self.spatial.variance(prior, &t, &h_row)),
        })
    }

    pub(crate) fn mean_model(&self) -> &MeanModel {
        &self.mean_model
    }
}
