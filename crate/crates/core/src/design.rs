//! Latin hypercube designs on the unit cube and on boxes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim_core::BoxDomain;

/// Random Latin hypercube of `n` points in `[0, 1]^d` (one point per stratum
/// in every coordinate, jittered within the stratum).
pub fn lhs_unit<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[j] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn min_pairwise_dist2(pts: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d2: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d2);
        }
    }
    best
}

/// Latin hypercube polished for the maximin criterion: among `candidates`
/// random hypercubes keep the best, then greedily swap coordinates between
/// pairs of points while the smallest pairwise distance improves.
pub fn maximin_lhs(n: usize, d: usize, seed: u64, candidates: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = lhs_unit(n, d, &mut rng);
    let mut best_score = min_pairwise_dist2(&best);
    for _ in 1..candidates.max(1) {
        let c = lhs_unit(n, d, &mut rng);
        let s = min_pairwise_dist2(&c);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    if n >= 2 {
        for _ in 0..(50 * n * d) {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..d);
            if i == j {
                continue;
            }
            let (a, b) = (best[i][k], best[j][k]);
            best[i][k] = b;
            best[j][k] = a;
            let s = min_pairwise_dist2(&best);
            if s > best_score {
                best_score = s;
            } else {
                best[i][k] = a;
                best[j][k] = b;
            }
        }
    }
    best
}

/// Random LHS mapped into `domain`.
pub fn lhs_in<R: Rng + ?Sized>(domain: &BoxDomain, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    lhs_unit(n, domain.dim(), rng).iter().map(|u| domain.from_unit(u)).collect()
}
