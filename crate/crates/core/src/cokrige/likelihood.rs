use nalgebra::{DMatrix, DVector};

use super::model::{MeanModel, Solver};
use super::{Hyperparams, ModelInputs};
use crate::Result;

/// Concentrated Gaussian log-likelihood (additive constant dropped) with the
/// GLS trend plugged in. Returns `-inf` when the covariance cannot be
/// factorized or the hyperparameters are invalid.
pub fn loglik(inputs: &ModelInputs, hyper: &Hyperparams) -> f64 {
    match MeanModel::new(inputs, hyper) {
        Ok((model, _, _)) => finite_or_neg_inf(model.solver.loglik()),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Log-likelihood of one autoregressive term: `y` has constant trend and
/// covariance `sigma2 * corr(theta) + diag(noise)`.
pub(crate) fn term_loglik(design: &[Vec<f64>], y: &DVector<f64>, theta: &[f64], sigma2: f64, noise: &[f64]) -> f64 {
    let n = design.len();
    let mut cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sigma2
        } else {
            sigma2 * super::gaussian_corr(&design[i], &design[j], theta)
        }
    });
    for (i, v) in noise.iter().enumerate() {
        cov[(i, i)] += v;
    }
    let h = DMatrix::from_element(n, 1, 1.0);
    match Solver::new(&cov, &h, y) {
        Ok(s) => finite_or_neg_inf(s.loglik()),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Response and diagonal noise of autoregressive term `level`:
/// `Y_l - rho Y_{l-1}` with variance `N_ll + rho^2 N_{l-1,l-1} - 2 rho N_{l-1,l}`.
pub(crate) fn term_data(inputs: &ModelInputs, level: usize, rho: f64) -> (DVector<f64>, Vec<f64>) {
    let n = inputs.num_points();
    if level == 0 {
        let y = DVector::from_column_slice(&inputs.estimates[0]);
        let noise = inputs.noise.iter().map(|c| c[0][0]).collect();
        return (y, noise);
    }
    let (cur, prev) = (&inputs.estimates[level], &inputs.estimates[level - 1]);
    let y = DVector::from_fn(n, |i, _| cur[i] - rho * prev[i]);
    let l = level;
    let noise = inputs
        .noise
        .iter()
        .map(|c| (c[l][l] + rho * rho * c[l - 1][l - 1] - 2.0 * rho * c[l - 1][l]).max(0.0))
        .collect();
    (y, noise)
}

/// Per-level terms of the decomposed likelihood. Their sum equals
/// [`loglik`] when the noise covariance is zero and approximates it otherwise.
pub fn decomposed_loglik(inputs: &ModelInputs, hyper: &Hyperparams) -> Result<Vec<f64>> {
    hyper.validate(inputs.num_levels(), inputs.dim())?;
    Ok((0..inputs.num_levels())
        .map(|l| {
            let rho = if l == 0 { 0.0 } else { hyper.rho[l - 1] };
            let (y, noise) = term_data(inputs, l, rho);
            term_loglik(&inputs.design, &y, &hyper.theta[l], hyper.sigma2[l], &noise)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cokrige::assemble;

    fn spread_design(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64, ((i * 7) % n) as f64 / n as f64]).collect()
    }

    fn two_level_hyper() -> Hyperparams {
        Hyperparams { rho: vec![0.8], theta: vec![vec![0.3, 0.5], vec![0.2, 0.4]], sigma2: vec![1.5, 0.4], beta: vec![] }
    }

    fn wavy(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.9 + phase).sin()).collect()
    }

    #[test]
    fn one_point_at_trend_is_log_variance() {
        let (s2, tau2) = (2.0, 0.5);
        let inputs = ModelInputs::new(vec![vec![0.1]], vec![0.5], vec![vec![3.0]], vec![vec![vec![tau2]]]).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![1.0]], sigma2: vec![s2], beta: vec![] };
        assert!((loglik(&inputs, &h) + 0.5 * (s2 + tau2).ln()).abs() < 1e-12);
    }

    #[test]
    fn intercept_shift_is_absorbed() {
        let design = spread_design(8);
        let base = ModelInputs::noiseless(design.clone(), vec![0.5], vec![wavy(8, 0.0)]).unwrap();
        let shifted =
            ModelInputs::noiseless(design, vec![0.5], vec![wavy(8, 0.0).iter().map(|v| v + 42.0).collect()]).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![0.3, 0.3]], sigma2: vec![1.0], beta: vec![] };
        assert!((loglik(&base, &h) - loglik(&shifted, &h)).abs() < 1e-8);
    }

    #[test]
    fn decomposition_is_exact_without_noise() {
        let n = 9;
        let inputs =
            ModelInputs::noiseless(spread_design(n), vec![0.6, 0.9], vec![wavy(n, 0.0), wavy(n, 0.4)]).unwrap();
        let h = two_level_hyper();
        let terms = decomposed_loglik(&inputs, &h).unwrap();
        let full = loglik(&inputs, &h);
        assert!((terms.iter().sum::<f64>() - full).abs() < 1e-7, "{terms:?} vs {full}");
    }

    #[test]
    fn single_level_decomposition_is_loglik() {
        let n = 6;
        let noise = (0..n).map(|i| vec![vec![0.01 * (i + 1) as f64]]).collect();
        let inputs = ModelInputs::new(spread_design(n), vec![0.5], vec![wavy(n, 1.0)], noise).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![0.2, 0.2]], sigma2: vec![0.7], beta: vec![] };
        assert!((decomposed_loglik(&inputs, &h).unwrap()[0] - loglik(&inputs, &h)).abs() < 1e-12);
    }

    #[test]
    fn exact_autoregression_has_zero_residual() {
        let n = 7;
        let y1 = wavy(n, 0.2);
        let y2: Vec<f64> = y1.iter().map(|v| 0.8 * v).collect();
        let inputs = ModelInputs::noiseless(spread_design(n), vec![0.6, 0.9], vec![y1, y2]).unwrap();
        let (resid, _) = term_data(&inputs, 1, 0.8);
        assert!(resid.amax() < 1e-15);
        let h = two_level_hyper();
        // Quadratic part vanishes so the term is the log-determinant alone.
        let term = decomposed_loglik(&inputs, &h).unwrap()[1];
        let design = &inputs.design;
        let cov = DMatrix::from_fn(n, n, |i, j| h.sigma2[1] * super::super::gaussian_corr(&design[i], &design[j], &h.theta[1]));
        let log_det = 2.0 * cov.cholesky().unwrap().l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((term + 0.5 * log_det).abs() < 1e-9);
    }

    #[test]
    fn singular_covariance_is_negative_infinity() {
        let inputs = ModelInputs::noiseless(vec![vec![0.5]; 3], vec![0.5], vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![1.0]], sigma2: vec![1.0], beta: vec![] };
        // Three copies of one point remain singular after jitter only if the
        // ladder is exhausted; here jitter rescues it, so the value is finite.
        assert!(loglik(&inputs, &h).is_finite());
        let bad = Hyperparams { sigma2: vec![f64::NAN], ..h };
        assert_eq!(loglik(&inputs, &bad), f64::NEG_INFINITY);
    }

    #[test]
    fn assembled_and_free_loglik_agree() {
        let n = 6;
        let inputs =
            ModelInputs::noiseless(spread_design(n), vec![0.6, 0.9], vec![wavy(n, 0.0), wavy(n, 0.5)]).unwrap();
        let h = two_level_hyper();
        let model = assemble(&inputs, &h).unwrap();
        assert_eq!(model.loglik(), loglik(&inputs, &h));
    }
}
