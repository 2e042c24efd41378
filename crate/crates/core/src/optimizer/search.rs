use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cokrige::AssembledModel;
use crate::design::lhs_in;
use crate::exec::{map_slice, Parallelism};
use crate::nelder_mead::{minimize_bounded, NelderMeadOptions};
use crate::normal;
use crate::sim_core::BoxDomain;
use crate::Result;

/// Expected improvement below `z_star` of a Gaussian with the given mean and
/// standard deviation.
pub fn expected_improvement(z_star: f64, mean: f64, sd: f64) -> f64 {
    let gain = z_star - mean;
    if sd > 0.0 {
        let u = gain / sd;
        (sd * normal::pdf(u) + gain * normal::cdf(u)).max(0.0)
    } else {
        gain.max(0.0)
    }
}

/// Candidate generation and polish settings for the searching stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    pub candidates: usize,
    pub polish_starts: usize,
    pub polish_evals: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x: Vec<f64>,
    pub ei: f64,
    /// Spatial predictive variance at `x`.
    pub var_spatial: f64,
    /// Every EI value vanished and the point of largest spatial variance
    /// was taken instead.
    pub fallback: bool,
}

/// Points closer than this to a design point are never proposed.
pub const MIN_SEPARATION: f64 = 1e-9;

fn far_from(design: &[Vec<f64>], x: &[f64]) -> bool {
    design.iter().all(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() > MIN_SEPARATION)
}

/// Maximize EI of the level-`level` predictor (spatial variance) over the
/// domain: score an LHS candidate set, polish the best few with bounded
/// Nelder-Mead, and never return a point on top of the design.
pub fn propose(
    model: &AssembledModel,
    level: usize,
    z_star: f64,
    domain: &BoxDomain,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    let design = &model.inputs.design;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let candidates = lhs_in(domain, settings.candidates.max(1), &mut rng);
    let score = |x: &[f64]| -> (f64, f64) {
        match model.predict(level, x) {
            Ok(p) => (expected_improvement(z_star, p.mean, p.var_spatial.sqrt()), p.var_spatial),
            Err(_) => (0.0, 0.0),
        }
    };
    let scored: Vec<(f64, f64)> = map_slice(settings.parallelism, &candidates, |x| score(x));

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));

    let step: Vec<f64> = domain.widths().iter().map(|w| 0.02 * w).collect();
    let nm = NelderMeadOptions { max_evals: settings.polish_evals, ftol: 1e-12, xtol: 1e-8 };
    let starts: Vec<usize> = order.iter().copied().take(settings.polish_starts).collect();
    let polished = map_slice(settings.parallelism, &starts, |&i| {
        let res = minimize_bounded(|x| -score(x).0, &candidates[i], &step, &domain.lower, &domain.upper, &nm);
        res.x
    });

    let mut pool: Vec<(Vec<f64>, f64, f64)> = polished
        .into_iter()
        .map(|x| {
            let (ei, v) = score(&x);
            (x, ei, v)
        })
        .chain(order.iter().map(|&i| (candidates[i].clone(), scored[i].0, scored[i].1)))
        .filter(|(x, _, _)| far_from(design, x))
        .collect();
    // Stable sort keeps polished points ahead of raw candidates on ties.
    pool.sort_by(|a, b| b.1.total_cmp(&a.1));

    if let Some((x, ei, v)) = pool.first().filter(|p| p.1 >= 1e-12).cloned() {
        return Ok(SearchOutcome { x, ei, var_spatial: v, fallback: false });
    }
    let (x, ei, v) = pool
        .iter()
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .cloned()
        .ok_or_else(|| crate::Error::Fitting("no admissible candidate point".into()))?;
    Ok(SearchOutcome { x, ei, var_spatial: v, fallback: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cokrige::{assemble, Hyperparams, ModelInputs};

    #[test]
    fn closed_form_values() {
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(expected_improvement(0.0, 3.0, 0.0), 0.0);
        assert_eq!(expected_improvement(1.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn design_points_have_zero_ei() {
        let design: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let y: Vec<f64> = design.iter().map(|x| (5.0 * x[0]).cos()).collect();
        let noise = (0..6).map(|_| vec![vec![0.05]]).collect();
        let inputs = ModelInputs::new(design.clone(), vec![0.5], vec![y], noise).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![0.05]], sigma2: vec![1.0], beta: vec![] };
        let model = assemble(&inputs, &h).unwrap();
        let z_star = design.iter().map(|x| model.predict_mean(0, x).unwrap()).fold(f64::INFINITY, f64::min);
        for x in &design {
            let p = model.predict(0, x).unwrap();
            assert!(p.var_spatial < 1e-8);
            assert!(expected_improvement(z_star, p.mean, p.var_spatial.sqrt()) < 1e-6);
        }
    }

    #[test]
    fn finds_unexplored_valley() {
        // Noiseless data with a deep dip at 0.62 that only two nearby design
        // points hint at.
        let f = |x: f64| -3.0 * (-(x - 0.62f64).powi(2) / 0.004).exp();
        let design: Vec<Vec<f64>> = [0.0, 0.15, 0.3, 0.45, 0.58, 0.68, 0.8, 1.0].iter().map(|v| vec![*v]).collect();
        let y = design.iter().map(|x| f(x[0])).collect();
        let inputs = ModelInputs::noiseless(design.clone(), vec![0.5], vec![y]).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![0.004]], sigma2: vec![2.0], beta: vec![] };
        let model = assemble(&inputs, &h).unwrap();
        let z_star = design.iter().map(|x| model.predict_mean(0, x).unwrap()).fold(f64::INFINITY, f64::min);
        let domain = BoxDomain::cube(1, 0.0, 1.0);
        let settings = SearchSettings {
            candidates: 200,
            polish_starts: 5,
            polish_evals: 200,
            seed: 3,
            parallelism: Parallelism::Sequential,
        };
        let out = propose(&model, 0, z_star, &domain, &settings).unwrap();
        // Dense-grid oracle for the EI maximizer.
        let (mut best_x, mut best_ei) = (0.0, f64::NEG_INFINITY);
        for i in 0..=100_000 {
            let x = i as f64 / 100_000.0;
            let p = model.predict(0, &[x]).unwrap();
            let ei = expected_improvement(z_star, p.mean, p.var_spatial.sqrt());
            if ei > best_ei {
                best_ei = ei;
                best_x = x;
            }
        }
        assert!((out.x[0] - best_x).abs() < 1e-3, "{} vs {best_x}", out.x[0]);
        assert!(out.ei >= best_ei * (1.0 - 1e-6));
        assert!(!out.fallback);
    }
}
