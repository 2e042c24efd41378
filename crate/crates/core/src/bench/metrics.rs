use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RunTrace;
use crate::cokrige::ModelDump;
use crate::design::lhs_in;
use crate::sim_core::{BoxDomain, LossProblem};
use crate::Result;

/// True minimizer of the objective quantile and its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub alpha: f64,
}

impl Optimum {
    pub fn of(problem: &LossProblem, alpha: f64) -> Result<Self> {
        let x = problem.true_argmin(alpha)?;
        let value = problem.true_quantile(&x, alpha)?;
        Ok(Optimum { x, value, alpha })
    }
}

/// Normalized gap-reduction curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GCurve {
    pub values: Vec<f64>,
    /// The best initial point was already optimal; the curve is all ones.
    pub degenerate: bool,
}

/// `G_k = (v(x0) - v(xhat_k)) / (v(x0) - v(x*))` from true quantiles only,
/// with `x0` the initial design point of lowest true value.
pub fn g_curve(trace: &RunTrace, problem: &LossProblem, optimum: &Optimum) -> Result<GCurve> {
    let alpha = optimum.alpha;
    let start = trace
        .header
        .initial_design
        .iter()
        .map(|x| problem.true_quantile(x, alpha))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let gap = start - optimum.value;
    if gap <= 1e-12 * (1.0 + start.abs()) {
        return Ok(GCurve { values: vec![1.0; trace.rows.len()], degenerate: true });
    }
    let values = trace
        .rows
        .iter()
        .map(|r| Ok((start - problem.true_quantile(&r.xhat, alpha)?) / gap))
        .collect::<Result<Vec<_>>>()?;
    Ok(GCurve { values, degenerate: false })
}

/// First cumulative evaluation count at which `G >= 0.99`.
pub fn s99(g: &[f64], evals: &[u64]) -> Option<u64> {
    g.iter().zip(evals).find(|(v, _)| **v >= 0.99).map(|(_, e)| *e)
}

/// Strict distance test in width-normalized coordinates, so `tol = 0.035` on
/// a unit interval is `|x - x*| < 0.035`.
pub fn true_selection(final_x: &[f64], argmin: &[f64], domain: &BoxDomain, tol: f64) -> bool {
    let dist = final_x
        .iter()
        .zip(argmin)
        .zip(domain.widths())
        .map(|((a, b), w)| ((a - b) / w).powi(2))
        .sum::<f64>()
        .sqrt();
    dist < tol
}

/// RMSE of the dumped model's top level against the true quantile surface
/// at `n` Latin-hypercube holdout points.
pub fn prediction_error(dump: &ModelDump, problem: &LossProblem, n: usize, seed: u64) -> Result<f64> {
    let model = dump.assemble()?;
    let level = model.num_levels() - 1;
    let alpha = dump.inputs.levels[level];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = lhs_in(&problem.domain, n, &mut rng);
    let mut sse = 0.0;
    for x in &pts {
        let e = model.predict_mean(level, x)? - problem.true_quantile(x, alpha)?;
        sse += e * e;
    }
    Ok((sse / n as f64).sqrt())
}
