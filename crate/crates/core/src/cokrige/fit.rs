use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::likelihood::{term_data, term_loglik};
use super::model::MeanModel;
use super::{AssembledModel, Hyperparams, ModelInputs};
use crate::design::lhs_in;
use crate::exec::{map_range, Parallelism};
use crate::nelder_mead::{minimize_bounded, NelderMeadOptions};
use crate::sim_core::BoxDomain;
use crate::{Error, Result};

/// Box bounds for hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    /// `(lo, hi)` for `theta` along each input dimension.
    pub theta: Vec<(f64, f64)>,
    /// `(lo, hi)` for `sigma2` at each level.
    pub sigma2: Vec<(f64, f64)>,
    pub rho: (f64, f64),
}

impl Bounds {
    /// `theta in [1e-3, 1e3] * width^2`, `sigma2 in [1e-6, 1e2] * var(Y_l)`,
    /// `rho in [0, 5]`.
    pub fn default_for(inputs: &ModelInputs, widths: &[f64]) -> Self {
        let theta = widths.iter().map(|w| (1e-3 * w * w, 1e3 * w * w)).collect();
        let sigma2 = inputs
            .estimates
            .iter()
            .map(|y| {
                let v = sample_variance(y).max(1e-12);
                (1e-6 * v, 1e2 * v)
            })
            .collect();
        Bounds { theta, sigma2, rho: (0.0, 5.0) }
    }

    pub fn contains(&self, hyper: &Hyperparams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        hyper.theta.iter().all(|t| t.iter().zip(&self.theta).all(|(v, b)| inside(*v, *b)))
            && hyper.sigma2.iter().zip(&self.sigma2).all(|(v, b)| inside(*v, *b))
            && hyper.rho.iter().all(|r| *r >= self.rho.0 && *r <= self.rho.1)
    }
}

fn sample_variance(y: &[f64]) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64
}

/// How the minimum gap between successive predictive curves is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySearch {
    pub grid_points: usize,
    pub polish_starts: usize,
    pub polish_evals: usize,
    pub seed: u64,
}

impl Default for PenaltySearch {
    fn default() -> Self {
        PenaltySearch { grid_points: 512, polish_starts: 5, polish_evals: 100, seed: 0x6772_6964 }
    }
}

/// Search grid materialized once so repeated penalty evaluations agree.
struct PenaltyGrid<'a> {
    points: Vec<Vec<f64>>,
    domain: &'a BoxDomain,
    polish_starts: usize,
    polish_evals: usize,
}

impl<'a> PenaltyGrid<'a> {
    fn new(domain: &'a BoxDomain, design: &[Vec<f64>], search: &PenaltySearch) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
        let mut points = lhs_in(domain, search.grid_points, &mut rng);
        points.extend(design.iter().cloned());
        PenaltyGrid { points, domain, polish_starts: search.polish_starts, polish_evals: search.polish_evals }
    }

    fn min_gap(&self, model: &MeanModel) -> f64 {
        let gap = |x: &[f64]| {
            let z = model.means_all(x);
            z.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        };
        let mut scored: Vec<(f64, usize)> = self.points.iter().enumerate().map(|(i, x)| (gap(x), i)).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = scored.first().map_or(f64::INFINITY, |s| s.0);
        if self.polish_evals > 0 {
            let step: Vec<f64> = self.domain.widths().iter().map(|w| 0.05 * w).collect();
            let opts = NelderMeadOptions { max_evals: self.polish_evals, ftol: 1e-10, xtol: 1e-6 };
            for &(_, i) in scored.iter().take(self.polish_starts) {
                let res = minimize_bounded(
                    |x: &[f64]| gap(x),
                    &self.points[i],
                    &step,
                    &self.domain.lower,
                    &self.domain.upper,
                    &opts,
                );
                best = best.min(res.value);
            }
        }
        best
    }
}

/// Minimum gap `phi` between successive level predictors over the search
/// grid (plus design points and local polish) and the penalty
/// `kappa = max(0, -phi)`. A single-level model has nothing to cross and
/// returns `(inf, 0)`.
pub fn crossing_penalty(model: &AssembledModel, domain: &BoxDomain, search: &PenaltySearch) -> (f64, f64) {
    if model.num_levels() < 2 {
        return (f64::INFINITY, 0.0);
    }
    let grid = PenaltyGrid::new(domain, &model.inputs.design, search);
    let phi = grid.min_gap(model.mean_model());
    (phi, (-phi).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Multistart count for the penalized stage (warm start included).
    pub starts: usize,
    /// Objective evaluations allowed per start, per free parameter.
    pub evals_per_param: usize,
    /// Penalty weight; `None` selects `1e3 * (1 + |loglik at warm start|)`.
    pub lambda: Option<f64>,
    /// Gap search used inside the penalized objective (grid only by default;
    /// the audit polishes).
    pub penalty: PenaltySearch,
    /// Gap search used to audit the final fit.
    pub audit: PenaltySearch,
    pub audit_tolerance: f64,
    /// Refits with `10 * lambda` allowed after a failed audit.
    pub max_escalations: usize,
    pub seed: u64,
    #[serde(skip)]
    pub parallelism: Parallelism,
    #[serde(skip)]
    pub bounds: Option<Bounds>,
    /// Extra start, typically the previous fit of the same levels.
    #[serde(skip)]
    pub previous: Option<Hyperparams>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 8,
            evals_per_param: 200,
            lambda: None,
            penalty: PenaltySearch { polish_starts: 0, polish_evals: 0, ..PenaltySearch::default() },
            audit: PenaltySearch { seed: 0x6175_6469, ..PenaltySearch::default() },
            audit_tolerance: 1e-6,
            max_escalations: 3,
            seed: 0x6669_7421,
            parallelism: Parallelism::default(),
            bounds: None,
            previous: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Fitted hyperparameters with the GLS trend filled in.
    pub hyper: Hyperparams,
    pub loglik: f64,
    pub warm_start: Hyperparams,
    pub warm_loglik: f64,
    /// Penalty weight of the accepted fit (after any escalation).
    pub lambda: f64,
    /// Audit minimum gap; `None` for single-level models.
    pub phi: Option<f64>,
    pub kappa: f64,
    pub audit_points: usize,
    pub escalations: usize,
    /// Set when the audit still fails after all escalations.
    pub flagged: bool,
    pub evaluations: usize,
}

/// Parameter layout: per level `[ln theta (d), ln sigma2]`, then `rho`.
struct Layout {
    m: usize,
    d: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.m * (self.d + 1) + self.m - 1
    }

    fn pack(&self, h: &Hyperparams) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.len());
        for l in 0..self.m {
            p.extend(h.theta[l].iter().map(|t| t.ln()));
            p.push(h.sigma2[l].ln());
        }
        p.extend(&h.rho);
        p
    }

    fn unpack(&self, p: &[f64]) -> Hyperparams {
        let stride = self.d + 1;
        let theta = (0..self.m).map(|l| p[l * stride..l * stride + self.d].iter().map(|v| v.exp()).collect()).collect();
        let sigma2 = (0..self.m).map(|l| p[l * stride + self.d].exp()).collect();
        let rho = p[self.m * stride..].to_vec();
        Hyperparams { rho, theta, sigma2, beta: vec![] }
    }

    fn box_bounds(&self, b: &Bounds) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for l in 0..self.m {
            for t in &b.theta {
                lo.push(t.0.ln());
                hi.push(t.1.ln());
            }
            lo.push(b.sigma2[l].0.ln());
            hi.push(b.sigma2[l].1.ln());
        }
        for _ in 1..self.m {
            lo.push(b.rho.0);
            hi.push(b.rho.1);
        }
        (lo, hi)
    }

    fn steps(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.m * (self.d + 1)];
        s.extend(std::iter::repeat_n(0.3, self.m - 1));
        s
    }
}

fn clamp_into(p: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in p.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Stage 1: maximize each decomposed-likelihood term on its own.
fn warm_start(inputs: &ModelInputs, bounds: &Bounds, opts: &FitOptions) -> (Hyperparams, usize) {
    let m = inputs.num_levels();
    let d = inputs.dim();
    let results = map_range(opts.parallelism, m, |l| {
        let has_rho = l > 0;
        let np = d + 1 + usize::from(has_rho);
        let mut lo: Vec<f64> = bounds.theta.iter().map(|t| t.0.ln()).collect();
        let mut hi: Vec<f64> = bounds.theta.iter().map(|t| t.1.ln()).collect();
        lo.push(bounds.sigma2[l].0.ln());
        hi.push(bounds.sigma2[l].1.ln());
        let rho0 = if has_rho {
            lo.push(bounds.rho.0);
            hi.push(bounds.rho.1);
            regression_slope(&inputs.estimates[l - 1], &inputs.estimates[l]).clamp(bounds.rho.0, bounds.rho.1)
        } else {
            0.0
        };
        let objective = |p: &[f64]| {
            let rho = if has_rho { p[d + 1] } else { 0.0 };
            let theta: Vec<f64> = p[..d].iter().map(|v| v.exp()).collect();
            let (y, noise) = term_data(inputs, l, rho);
            -term_loglik(&inputs.design, &y, &theta, p[d].exp(), &noise)
        };
        let (y0, _) = term_data(inputs, l, rho0);
        let s0 = sample_variance(y0.as_slice()).max(1e-12).ln();
        let mut step = vec![1.0; d + 1];
        if has_rho {
            step.push(0.3);
        }
        let nm = NelderMeadOptions { max_evals: opts.evals_per_param * np, ftol: 1e-9, xtol: 1e-6 };
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut evals = 0;
        for frac in [0.02, 0.3] {
            let mut p0: Vec<f64> = bounds.theta.iter().map(|t| (t.0 * t.1).sqrt().ln() + f64::ln(frac)).collect();
            p0.push(s0);
            if has_rho {
                p0.push(rho0);
            }
            clamp_into(&mut p0, &lo, &hi);
            let res = minimize_bounded(objective, &p0, &step, &lo, &hi, &nm);
            evals += res.evals;
            if best.as_ref().is_none_or(|b| res.value < b.0) {
                best = Some((res.value, res.x));
            }
        }
        let (_, p) = best.expect("two starts ran");
        (p, evals)
    });
    let mut hyper = Hyperparams { rho: vec![], theta: vec![], sigma2: vec![], beta: vec![] };
    let mut evals = 0;
    for (l, (p, e)) in results.into_iter().enumerate() {
        evals += e;
        hyper.theta.push(p[..d].iter().map(|v| v.exp()).collect());
        hyper.sigma2.push(p[d].exp());
        if l > 0 {
            hyper.rho.push(p[d + 1]);
        }
    }
    (hyper, evals)
}

fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        1.0
    }
}

/// Penalized negative log-likelihood `-loglik + lambda * kappa`.
fn objective(inputs: &ModelInputs, hyper: &Hyperparams, lambda: f64, grid: Option<&PenaltyGrid>) -> f64 {
    let Ok((model, _, _)) = MeanModel::new(inputs, hyper) else {
        return f64::INFINITY;
    };
    let ll = model.solver.loglik();
    if !ll.is_finite() {
        return f64::INFINITY;
    }
    let kappa = match grid {
        Some(g) if lambda > 0.0 => (-g.min_gap(&model)).max(0.0),
        _ => 0.0,
    };
    -ll + lambda * kappa
}

/// Penalized maximum-likelihood fit.
///
/// Stage 1 maximizes every decomposed-likelihood term separately; stage 2
/// minimizes `-loglik + lambda * kappa` with bounded Nelder-Mead from the
/// warm start and random perturbations of it. The winner is audited on an
/// independent grid and refit with a tenfold penalty while it still crosses.
pub fn fit(inputs: &ModelInputs, domain: &BoxDomain, opts: &FitOptions) -> Result<FitReport> {
    let m = inputs.num_levels();
    let d = inputs.dim();
    if domain.dim() != d {
        return Err(Error::arg("domain and design dimensions differ"));
    }
    if inputs.num_points() < 2 {
        return Err(Error::arg("fitting needs at least two design points"));
    }
    let bounds = opts.bounds.clone().unwrap_or_else(|| Bounds::default_for(inputs, &domain.widths()));
    if bounds.theta.len() != d || bounds.sigma2.len() != m {
        return Err(Error::arg("bounds do not match the model dimensions"));
    }
    let layout = Layout { m, d };
    let (lo, hi) = layout.box_bounds(&bounds);

    let (warm, mut evaluations) = warm_start(inputs, &bounds, opts);
    let warm_loglik = super::loglik(inputs, &warm);
    let mut lambda = opts.lambda.unwrap_or_else(|| {
        if warm_loglik.is_finite() {
            1e3 * (1.0 + warm_loglik.abs())
        } else {
            1e3
        }
    });

    let grid = (m > 1).then(|| PenaltyGrid::new(domain, &inputs.design, &opts.penalty));
    let mut starts = vec![layout.pack(&warm)];
    if let Some(prev) = &opts.previous {
        if prev.validate(m, d).is_ok() {
            let mut p = layout.pack(prev);
            clamp_into(&mut p, &lo, &hi);
            starts.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let base = starts[0].clone();
    for _ in 1..opts.starts.max(1) {
        let mut p: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let scale = if i < m * (d + 1) { 1.0 } else { 0.3 };
                v + scale * standard_normal(&mut rng)
            })
            .collect();
        clamp_into(&mut p, &lo, &hi);
        starts.push(p);
    }
    let nm = NelderMeadOptions { max_evals: opts.evals_per_param * layout.len(), ftol: 1e-9, xtol: 1e-6 };
    let steps = layout.steps();

    let mut escalations = 0;
    loop {
        let runs = map_range(opts.parallelism, starts.len(), |i| {
            let f = |p: &[f64]| objective(inputs, &layout.unpack(p), lambda, grid.as_ref());
            minimize_bounded(f, &starts[i], &steps, &lo, &hi, &nm)
        });
        evaluations += runs.iter().map(|r| r.evals).sum::<usize>();
        let best = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.value.is_finite())
            .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
            .map(|(_, r)| r.x.clone())
            .ok_or_else(|| Error::Fitting("every start failed to assemble a positive definite model".into()))?;
        let hyper = layout.unpack(&best);
        let model = super::assemble(inputs, &hyper)?;
        let (phi, kappa) = if m > 1 {
            let (phi, kappa) = crossing_penalty(&model, domain, &opts.audit);
            (Some(phi), kappa)
        } else {
            (None, 0.0)
        };
        let passed = phi.is_none_or(|p| p >= -opts.audit_tolerance);
        if passed || lambda <= 0.0 || escalations >= opts.max_escalations {
            return Ok(FitReport {
                hyper: model.hyper().clone(),
                loglik: model.loglik(),
                warm_start: warm,
                warm_loglik,
                lambda,
                phi,
                kappa,
                audit_points: opts.audit.grid_points,
                escalations,
                flagged: !passed,
                evaluations,
            });
        }
        escalations += 1;
        lambda *= 10.0;
        starts.insert(0, best);
    }
}

/// Standard normal draw by Box-Muller (cosine branch).
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cokrige::assemble;

    fn line(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn layout_round_trip() {
        let layout = Layout { m: 3, d: 2 };
        let h = Hyperparams {
            rho: vec![0.5, 1.2],
            theta: vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]],
            sigma2: vec![1.0, 2.0, 3.0],
            beta: vec![],
        };
        let p = layout.pack(&h);
        assert_eq!(p.len(), layout.len());
        let back = layout.unpack(&p);
        for (a, b) in back.theta.iter().flatten().zip(h.theta.iter().flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(back.rho, h.rho);
    }

    #[test]
    fn separated_curves_have_zero_penalty() {
        let design = line(6);
        let y1: Vec<f64> = design.iter().map(|x| (3.0 * x[0]).sin()).collect();
        let y2: Vec<f64> = y1.iter().map(|v| v + 2.0).collect();
        let inputs = ModelInputs::noiseless(design, vec![0.5, 0.9], vec![y1, y2]).unwrap();
        let h = Hyperparams { rho: vec![1.0], theta: vec![vec![0.1]; 2], sigma2: vec![1.0, 0.01], beta: vec![] };
        let model = assemble(&inputs, &h).unwrap();
        let domain = BoxDomain::cube(1, 0.0, 1.0);
        let (phi, kappa) = crossing_penalty(&model, &domain, &PenaltySearch::default());
        assert!(phi >= 0.5, "{phi}");
        assert_eq!(kappa, 0.0);
    }

    #[test]
    fn data_forced_crossing_is_penalized() {
        let design = line(6);
        let y1: Vec<f64> = design.iter().map(|x| (3.0 * x[0]).sin()).collect();
        let y2: Vec<f64> = y1.iter().map(|v| v - 1.0).collect();
        let inputs = ModelInputs::noiseless(design.clone(), vec![0.5, 0.9], vec![y1, y2]).unwrap();
        let h = Hyperparams { rho: vec![1.0], theta: vec![vec![0.1]; 2], sigma2: vec![1.0, 0.5], beta: vec![] };
        let model = assemble(&inputs, &h).unwrap();
        let (phi, kappa) = crossing_penalty(&model, &BoxDomain::cube(1, 0.0, 1.0), &PenaltySearch::default());
        // Grid oracle: at the design points the gap is exactly -1.
        let oracle = design
            .iter()
            .map(|x| model.predict_mean(1, x).unwrap() - model.predict_mean(0, x).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(oracle < -0.99);
        assert!(phi <= oracle + 1e-9);
        assert!(kappa > 0.0);
    }

    #[test]
    fn single_level_has_no_penalty() {
        let inputs = ModelInputs::noiseless(line(3), vec![0.5], vec![vec![0.0, 1.0, 0.0]]).unwrap();
        let h = Hyperparams { rho: vec![], theta: vec![vec![0.1]], sigma2: vec![1.0], beta: vec![] };
        let model = assemble(&inputs, &h).unwrap();
        assert_eq!(crossing_penalty(&model, &BoxDomain::cube(1, 0.0, 1.0), &PenaltySearch::default()).1, 0.0);
    }

    #[test]
    fn zero_lambda_is_plain_likelihood() {
        let design = line(5);
        let inputs = ModelInputs::noiseless(
            design,
            vec![0.5, 0.9],
            vec![vec![0.0, 1.0, 0.5, 0.2, 0.9], vec![0.3, 1.2, 0.1, 0.4, 1.5]],
        )
        .unwrap();
        let h = Hyperparams { rho: vec![0.7], theta: vec![vec![0.05]; 2], sigma2: vec![1.0, 0.5], beta: vec![] };
        let domain = BoxDomain::cube(1, 0.0, 1.0);
        let grid = PenaltyGrid::new(&domain, &inputs.design, &PenaltySearch::default());
        let q = objective(&inputs, &h, 0.0, Some(&grid));
        assert!((q + super::super::loglik(&inputs, &h)).abs() < 1e-12);
    }

    #[test]
    fn fitted_hyperparameters_respect_bounds() {
        let design = line(8);
        let y: Vec<f64> = design.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let inputs = ModelInputs::noiseless(design, vec![0.5], vec![y]).unwrap();
        let domain = BoxDomain::cube(1, 0.0, 1.0);
        let opts = FitOptions { parallelism: Parallelism::Sequential, ..FitOptions::default() };
        let report = fit(&inputs, &domain, &opts).unwrap();
        let bounds = Bounds::default_for(&inputs, &domain.widths());
        assert!(bounds.contains(&report.hyper));
        assert!(!report.flagged);
        assert!(report.loglik >= report.warm_loglik - 1e-9);
    }
}
