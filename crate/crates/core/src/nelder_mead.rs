//! Box-constrained Nelder-Mead.
//!
//! Trial points are projected onto the box before evaluation; non-finite
//! objective values are treated as `+inf` so infeasible regions simply repel
//! the simplex.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this (absolute
    /// plus relative to the best value).
    pub ftol: f64,
    /// Stop when every vertex is within this distance of the best one,
    /// measured per coordinate relative to the initial step.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 1000, ftol: 1e-10, xtol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

pub fn minimize_bounded<F>(
    f: F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let project = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    project(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&start);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut p = start.clone();
        // Step inward when the start sits on the upper face.
        p[i] += if p[i] + step[i] <= upper[i] { step[i] } else { -step[i] };
        project(&mut p);
        let v = eval(&p);
        simplex.push((p, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals.get() < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && worst.is_finite() && (worst - best) <= opts.ftol * (1.0 + best.abs()) {
            let spread_ok = simplex[1..].iter().all(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .zip(step)
                    .all(|((a, b), s)| (a - b).abs() <= opts.xtol * s.abs().max(f64::MIN_POSITIVE))
            });
            if spread_ok || (worst - best) == 0.0 {
                break;
            }
        }

        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += p[i] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n).map(|i| centroid[i] + t * (simplex[n].0[i] - centroid[i])).collect();
            project(&mut p);
            p
        };

        let xr = along(-alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let b = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = (0..n).map(|i| b[i] + sigma * (v.0[i] - b[i])).collect();
            project(&mut p);
            let fv = eval(&p);
            *v = (p, fv);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals: evals.get() }
}
