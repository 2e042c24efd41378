//! Budget bookkeeping for the allocation stage: per-iteration budget growth,
//! deficit top-ups, OCBA weights and integer rounding.

/// Minimum cumulative replications per point after iteration `k`,
/// `r0 + ceil(k^exponent)`.
pub fn rk_floor(r0: u64, k: usize, exponent: f64) -> u64 {
    if k == 0 {
        return r0;
    }
    r0 + (k as f64).powf(exponent).ceil() as u64
}

/// Replications each point needs to reach `floor`.
pub fn deficits(counts: &[u64], floor: u64) -> Vec<u64> {
    counts.iter().map(|&n| floor.saturating_sub(n)).collect()
}

/// Unclipped iteration budget.
///
/// The first iteration spends `max(r0, deficit)`; later ones take the larger
/// of the deficit and `floor(prev * (1 + v / (v + s2)))`, where `v` is the
/// largest point-estimate noise variance at the guiding level and `s2` the
/// spatial predictive variance at the newly selected point.
pub fn next_budget(k: usize, prev: u64, deficit: u64, max_noise_var: f64, spatial_var: f64, r0: u64) -> u64 {
    if k <= 1 {
        return r0.max(deficit);
    }
    let denom = max_noise_var + spatial_var;
    // With no uncertainty of either kind left, grow as fast as allowed.
    let ratio = if denom > 0.0 { max_noise_var / denom } else { 1.0 };
    let growth = (prev as f64 * (1.0 + ratio)).floor() as u64;
    deficit.max(growth)
}

/// Clip `budget` to what remains; if the leftover could not fund another
/// new point, spend it now so the run ends with nothing stranded.
pub fn clip_budget(budget: u64, remaining: u64, r0: u64) -> u64 {
    let b = budget.min(remaining);
    if remaining - b < r0 {
        remaining
    } else {
        b
    }
}

/// Split `total` in proportion to `weights` with the largest-remainder
/// method; ties go to the lowest index. Zero total weight splits uniformly.
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let n = weights.len();
    if n == 0 || total == 0 {
        return vec![0; n];
    }
    let sum: f64 = weights.iter().sum();
    let uniform = !(sum > 0.0) || !sum.is_finite();
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| if uniform { total as f64 / n as f64 } else { total as f64 * w / sum })
        .collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Continuous OCBA weights at the guiding level.
///
/// With `b = argmin estimates` and `lambda_i = estimates[i] - estimates[b]`,
/// non-best points get `sqrt(var_i) / lambda_i`. The best point gets
/// `sqrt(var_b) * sqrt(sum w_i / var_i)` by default, or the textbook
/// `sqrt(var_b) * sqrt(sum w_i^2 / var_i)` when `classical` is set. Gaps are
/// floored at `1e-6 * (max - min)`; if every estimate ties the split is uniform.
pub fn ocba_weights(estimates: &[f64], variances: &[f64], classical: bool) -> Vec<f64> {
    let n = estimates.len();
    if n == 0 {
        return Vec::new();
    }
    let best = argmin(estimates);
    let lo = estimates[best];
    let hi = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if !(spread > 0.0) {
        return vec![1.0; n];
    }
    let floor = 1e-6 * spread;
    let mut w: Vec<f64> = (0..n)
        .map(|i| if i == best { 0.0 } else { variances[i].max(0.0).sqrt() / (estimates[i] - lo).max(floor) })
        .collect();
    let inner: f64 = (0..n)
        .filter(|&i| i != best && variances[i] > 0.0)
        .map(|i| if classical { w[i] * w[i] / variances[i] } else { w[i] / variances[i] })
        .sum();
    w[best] = variances[best].max(0.0).sqrt() * inner.sqrt();
    if w.iter().sum::<f64>() > 0.0 {
        w
    } else {
        vec![1.0; n]
    }
}

/// Integer OCBA allocation of `budget` replications.
pub fn ocba_allocate(estimates: &[f64], variances: &[f64], budget: u64, classical: bool) -> Vec<u64> {
    largest_remainder(&ocba_weights(estimates, variances, classical), budget)
}

/// Lowest index of the minimum.
pub(crate) fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map_or(0, |(i, _)| i)
}

/// Result of the allocation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub per_point: Vec<u64>,
    /// The budget could not cover every deficit.
    pub short: bool,
}

/// Top every point up to `floor` first, then distribute the rest by OCBA.
/// A budget below the total deficit is split in proportion to the deficits.
pub fn allocate(
    counts: &[u64],
    floor: u64,
    estimates: &[f64],
    variances: &[f64],
    budget: u64,
    classical: bool,
) -> Allocation {
    let need = deficits(counts, floor);
    let total_need: u64 = need.iter().sum();
    if budget < total_need {
        let w: Vec<f64> = need.iter().map(|&v| v as f64).collect();
        return Allocation { per_point: largest_remainder(&w, budget), short: true };
    }
    let extra = ocba_allocate(estimates, variances, budget - total_need, classical);
    Allocation { per_point: need.iter().zip(extra).map(|(a, b)| a + b).collect(), short: false }
}

/// Noise tolerance update: `max(c0, eps * n / (n + A / (|D| + A / B)))`,
/// unchanged when `B = 0`.
pub fn update_c0(c0: f64, eps: f64, n: u64, remaining: u64, design_size: usize, budget: u64) -> f64 {
    if budget == 0 {
        return c0;
    }
    let a = remaining as f64;
    let n = n as f64;
    let candidate = eps * n / (n + a / (design_size as f64 + a / budget as f64));
    if candidate.is_finite() {
        c0.max(candidate)
    } else {
        c0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_branch_examples() {
        assert_eq!(next_budget(2, 10, 0, 3.0, 3.0, 5), 15);
        assert_eq!(next_budget(2, 10, 0, 3.0, 0.0, 5), 20);
        assert_eq!(next_budget(2, 10, 40, 3.0, 3.0, 5), 40);
        assert_eq!(next_budget(1, 0, 7, 3.0, 3.0, 5), 7);
        assert_eq!(next_budget(1, 0, 2, 3.0, 3.0, 5), 5);
    }

    #[test]
    fn clipping_absorbs_unusable_remainder() {
        assert_eq!(clip_budget(30, 100, 20), 30);
        assert_eq!(clip_budget(90, 100, 20), 100);
        assert_eq!(clip_budget(500, 100, 20), 100);
    }

    #[test]
    fn ratio_rule_on_equal_variances() {
        // Best at index 0; gaps 1 and 2 with equal variances.
        let w = ocba_weights(&[0.0, 1.0, 2.0], &[4.0, 4.0, 4.0], false);
        assert!((w[1] / w[2] - 2.0).abs() < 1e-12);
        let n = ocba_allocate(&[0.0, 1.0, 2.0], &[4.0, 4.0, 4.0], 0, false);
        assert_eq!(n, vec![0, 0, 0]);
    }

    #[test]
    fn printed_and_classical_best_weights() {
        let (est, var) = ([0.0, 1.0, 2.0], [1.0, 4.0, 9.0]);
        // w1 = 2/1 = 2, w2 = 3/2 = 1.5.
        let p = ocba_weights(&est, &var, false);
        assert!((p[0] - (2.0f64 / 4.0 + 1.5 / 9.0).sqrt()).abs() < 1e-12);
        let c = ocba_weights(&est, &var, true);
        assert!((c[0] - (4.0f64 / 4.0 + 2.25 / 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tie_with_best_gets_largest_share() {
        let est = [1.0, 1.0, 2.0, 3.0];
        let var = [1.0, 1.0, 1.0, 1.0];
        let w = ocba_weights(&est, &var, false);
        assert!(w[1] > w[2] && w[1] > w[3]);
        assert!((w[1] - 1.0 / (1e-6 * 2.0)).abs() < 1e-3);
    }

    #[test]
    fn all_tied_is_uniform() {
        assert_eq!(ocba_allocate(&[2.0; 4], &[1.0; 4], 10, false), vec![3, 3, 2, 2]);
    }

    #[test]
    fn largest_remainder_ties_lowest_index() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[3.0, 1.0], 8), vec![6, 2]);
    }

    #[test]
    fn deficits_first_then_ocba() {
        let a = allocate(&[10, 12, 15], 12, &[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0], 2, false);
        assert_eq!(a.per_point, vec![2, 0, 0]);
        assert!(!a.short);
        let short = allocate(&[0, 6], 12, &[0.0, 1.0], &[1.0, 1.0], 9, false);
        assert!(short.short);
        assert_eq!(short.per_point, vec![6, 3]);
        assert!(allocate(&[5, 5], 5, &[0.0, 1.0], &[1.0, 1.0], 0, false).per_point.iter().all(|v| *v == 0));
    }

    #[test]
    fn c0_examples() {
        assert!((update_c0(0.1, 2.0, 50, 1000, 10, 100) - 1.0).abs() < 1e-12);
        assert_eq!(update_c0(0.1, 2.0, 50, 0, 10, 100), 2.0);
        // With A far above B the projected count tends to N + B.
        assert!((update_c0(0.5, 2.0, 50, 1_000_000_000, 10, 100) - 2.0 / 3.0).abs() < 1e-5);
        assert_eq!(update_c0(0.7, 2.0, 50, 1_000_000_000, 10, 100), 0.7);
        assert_eq!(update_c0(0.5, 9.0, 50, 100, 10, 0), 0.5);
    }

    #[test]
    fn rk_schedule() {
        assert_eq!(rk_floor(50, 0, 2.1), 50);
        assert_eq!(rk_floor(50, 1, 2.1), 51);
        assert_eq!(rk_floor(50, 2, 2.1), 55);
        assert_eq!(rk_floor(50, 3, 2.1), 61);
    }
}
