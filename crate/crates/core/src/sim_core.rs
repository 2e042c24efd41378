//! Stochastic loss simulators, RNG stream management and quantile oracles.
//!
//! Every built-in loss has the form `L(x) = mean(x) + noise(x)` where the
//! noise is either `Normal(0, scale(x)^2)` or `exp(Normal(0, scale(x)^2))`.
//! Because the family is known, quantiles and densities are available in
//! closed form and serve as oracles for metrics and tests.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nelder_mead::{self, NelderMeadOptions};
use crate::{normal, Error, Result};

/// Words of ChaCha output reserved per replication (two `u64` draws).
const WORDS_PER_REPLICATION: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemId {
    Fig1,
    Exp1,
    Exp2,
    AckleyLogn,
    RastriginLogn,
    LevyLogn,
    Custom,
}

impl ProblemId {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::Fig1 => "fig1",
            ProblemId::Exp1 => "exp1",
            ProblemId::Exp2 => "exp2",
            ProblemId::AckleyLogn => "ackley-logn",
            ProblemId::RastriginLogn => "rastrigin-logn",
            ProblemId::LevyLogn => "levy-logn",
            ProblemId::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "fig1" => ProblemId::Fig1,
            "exp1" => ProblemId::Exp1,
            "exp2" => ProblemId::Exp2,
            "ackley-logn" | "ackley" | "l1" => ProblemId::AckleyLogn,
            "rastrigin-logn" | "rastrigin" | "l2" => ProblemId::RastriginLogn,
            "levy-logn" | "levy" | "l3" => ProblemId::LevyLogn,
            "custom" => ProblemId::Custom,
            other => return Err(Error::Config(format!("unknown problem id `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Normal,
    Lognormal,
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::arg("domain bounds must be non-empty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::arg("domain lower bound must be below upper bound"));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        BoxDomain { lower: vec![lo; dim], upper: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }
}

/// Values on a tensor grid, multilinearly interpolated. `values` is stored
/// row-major with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl GridTable {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::arg("grid table needs at least one axis"));
        }
        for a in &axes {
            if a.len() < 2 || a.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::arg("grid axes need >= 2 strictly increasing nodes"));
            }
        }
        let expected: usize = axes.iter().map(Vec::len).product();
        if values.len() != expected {
            return Err(Error::arg(format!(
                "grid table expects {expected} values, got {}",
                values.len()
            )));
        }
        Ok(GridTable { axes, values })
    }

    fn domain(&self) -> BoxDomain {
        BoxDomain {
            lower: self.axes.iter().map(|a| a[0]).collect(),
            upper: self.axes.iter().map(|a| a[a.len() - 1]).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.axes.len();
        // Per axis: lower node index and fractional weight.
        let mut cell = Vec::with_capacity(d);
        for (axis, &v) in self.axes.iter().zip(x) {
            let n = axis.len();
            let v = v.clamp(axis[0], axis[n - 1]);
            let i = match axis.partition_point(|&a| a <= v) {
                0 => 0,
                p if p >= n => n - 2,
                p => p - 1,
            };
            let t = (v - axis[i]) / (axis[i + 1] - axis[i]);
            cell.push((i, t));
        }
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].len();
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                let (i, t) = cell[k];
                if corner >> k & 1 == 1 {
                    w *= t;
                    idx += (i + 1) * strides[k];
                } else {
                    w *= 1.0 - t;
                    idx += i * strides[k];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MeanFn {
    Fig1,
    DampedCosine,
    Ackley,
    Rastrigin,
    Levy,
    Table(Arc<GridTable>),
}

#[derive(Debug, Clone, PartialEq)]
enum ScaleFn {
    Fig1,
    LinearVariance,
    SineVariance,
    /// `1.6 + 0.01 * ||x - center||^2`, used as the log-sd of lognormal noise.
    QuadraticLogScale { center: f64 },
    Constant(f64),
    Table(Arc<GridTable>),
}

/// A stochastic loss `L(x) = mean(x) + noise(x)` over a box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProblem {
    pub id: ProblemId,
    pub domain: BoxDomain,
    pub noise_family: NoiseFamily,
    mean: MeanFn,
    scale: ScaleFn,
}

impl LossProblem {
    /// `sin(2.5x) sin(1.5x)` with normal noise of variance
    /// `0.01 + 0.25 (1 - sin(2.5x))^2` on `[0, 2]`.
    pub fn fig1() -> Self {
        LossProblem {
            id: ProblemId::Fig1,
            domain: BoxDomain::cube(1, 0.0, 2.0),
            noise_family: NoiseFamily::Normal,
            mean: MeanFn::Fig1,
            scale: ScaleFn::Fig1,
        }
    }

    /// Damped cosine mean with variance `5x` on `[0, 1]`.
    pub fn exp1() -> Self {
        LossProblem {
            id: ProblemId::Exp1,
            domain: BoxDomain::cube(1, 0.0, 1.0),
            noise_family: NoiseFamily::Normal,
            mean: MeanFn::DampedCosine,
            scale: ScaleFn::LinearVariance,
        }
    }

    /// Damped cosine mean with variance `10 (2 + sin(10 pi x - 0.5))` on `[0, 1]`.
    pub fn exp2() -> Self {
        LossProblem {
            id: ProblemId::Exp2,
            domain: BoxDomain::cube(1, 0.0, 1.0),
            noise_family: NoiseFamily::Normal,
            mean: MeanFn::DampedCosine,
            scale: ScaleFn::SineVariance,
        }
    }

    pub fn ackley_logn(dim: usize) -> Self {
        Self::lognormal_test(ProblemId::AckleyLogn, dim, MeanFn::Ackley, 1.0)
    }

    pub fn rastrigin_logn(dim: usize) -> Self {
        Self::lognormal_test(ProblemId::RastriginLogn, dim, MeanFn::Rastrigin, 1.0)
    }

    pub fn levy_logn(dim: usize) -> Self {
        Self::lognormal_test(ProblemId::LevyLogn, dim, MeanFn::Levy, 0.0)
    }

    fn lognormal_test(id: ProblemId, dim: usize, mean: MeanFn, center: f64) -> Self {
        LossProblem {
            id,
            domain: BoxDomain::cube(dim.max(1), -10.0, 10.0),
            noise_family: NoiseFamily::Lognormal,
            mean,
            scale: ScaleFn::QuadraticLogScale { center },
        }
    }

    /// Built-in problem by id. The lognormal problems take `dim`; the 1-D
    /// problems ignore it.
    pub fn builtin(id: ProblemId, dim: usize) -> Result<Self> {
        Ok(match id {
            ProblemId::Fig1 => Self::fig1(),
            ProblemId::Exp1 => Self::exp1(),
            ProblemId::Exp2 => Self::exp2(),
            ProblemId::AckleyLogn => Self::ackley_logn(dim),
            ProblemId::RastriginLogn => Self::rastrigin_logn(dim),
            ProblemId::LevyLogn => Self::levy_logn(dim),
            ProblemId::Custom => {
                return Err(Error::Config("custom problems need a table definition".into()))
            }
        })
    }

    /// Problem defined by interpolated tables for the mean and noise scale.
    /// For `Normal` noise the scale is the standard deviation, for
    /// `Lognormal` it is the log-scale standard deviation.
    pub fn custom(mean: GridTable, scale: GridTable, family: NoiseFamily) -> Result<Self> {
        if mean.axes != scale.axes {
            return Err(Error::arg("mean and scale tables must share one grid"));
        }
        if scale.values.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::arg("noise scale must be strictly positive"));
        }
        Ok(LossProblem {
            id: ProblemId::Custom,
            domain: mean.domain(),
            noise_family: family,
            mean: MeanFn::Table(Arc::new(mean)),
            scale: ScaleFn::Table(Arc::new(scale)),
        })
    }

    /// Replace the noise scale by a location-independent value. Zero gives a
    /// deterministic loss, which is only meaningful for tests.
    pub fn with_constant_scale(mut self, scale: f64) -> Self {
        assert!(scale >= 0.0 && scale.is_finite(), "noise scale must be >= 0");
        self.scale = ScaleFn::Constant(scale);
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match &self.mean {
            MeanFn::Fig1 => (2.5 * x[0]).sin() * (1.5 * x[0]).sin(),
            MeanFn::DampedCosine => {
                let s = x[0] - 0.02;
                5.0 * (0.2 * s + 1.0) * (13.0 * s).cos()
            }
            MeanFn::Ackley => ackley(x),
            MeanFn::Rastrigin => rastrigin(x),
            MeanFn::Levy => levy(x),
            MeanFn::Table(t) => t.eval(x),
        }
    }

    /// Standard deviation (normal) or log-standard deviation (lognormal).
    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        match &self.scale {
            ScaleFn::Fig1 => {
                let r = 1.0 - (2.5 * x[0]).sin();
                (0.01 + 0.25 * r * r).sqrt()
            }
            ScaleFn::LinearVariance => (5.0 * x[0]).max(0.0).sqrt(),
            ScaleFn::SineVariance => (10.0 * (2.0 + (10.0 * PI * x[0] - 0.5).sin())).sqrt(),
            ScaleFn::QuadraticLogScale { center } => {
                1.6 + 0.01 * x.iter().map(|v| (v - center) * (v - center)).sum::<f64>()
            }
            ScaleFn::Constant(s) => *s,
            ScaleFn::Table(t) => t.eval(x),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }

    /// Draw `n` replications at `x`, advancing the stream's counter by `n`.
    pub fn simulate(&self, x: &[f64], n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if n == 0 {
            return Err(Error::arg("replication count must be >= 1"));
        }
        let m = self.mean(x);
        let s = self.noise_scale(x);
        let z = stream.standard_normals(n);
        Ok(match self.noise_family {
            NoiseFamily::Normal => z.into_iter().map(|z| m + s * z).collect(),
            NoiseFamily::Lognormal => z.into_iter().map(|z| m + (s * z).exp()).collect(),
        })
    }

    /// Closed-form alpha-quantile of `L(x)`.
    pub fn true_quantile(&self, x: &[f64], alpha: f64) -> Result<f64> {
        check_level(alpha)?;
        self.check_point(x)?;
        Ok(self.quantile_unchecked(x, alpha))
    }

    fn quantile_unchecked(&self, x: &[f64], alpha: f64) -> f64 {
        let z = normal::quantile(alpha);
        let s = self.noise_scale(x);
        match self.noise_family {
            NoiseFamily::Normal => self.mean(x) + s * z,
            NoiseFamily::Lognormal => self.mean(x) + (s * z).exp(),
        }
    }

    /// Density of `L(x)` at `y`.
    pub fn density(&self, x: &[f64], y: f64) -> f64 {
        let s = self.noise_scale(x);
        let w = y - self.mean(x);
        match self.noise_family {
            NoiseFamily::Normal => normal::pdf(w / s) / s,
            NoiseFamily::Lognormal if w > 0.0 => normal::pdf(w.ln() / s) / (w * s),
            NoiseFamily::Lognormal => 0.0,
        }
    }

    /// Minimizer of the closed-form alpha-quantile over the domain.
    ///
    /// 1-D: 10^4-point grid followed by golden-section refinement inside the
    /// best grid cell. d-D: dense candidate set, then bounded Nelder-Mead
    /// from the 50 best candidates.
    pub fn true_argmin(&self, alpha: f64) -> Result<Vec<f64>> {
        check_level(alpha)?;
        let f = |x: &[f64]| self.quantile_unchecked(x, alpha);
        if self.dim() == 1 {
            return Ok(vec![argmin_1d(&f, self.domain.lower[0], self.domain.upper[0], 10_000)]);
        }
        Ok(argmin_multistart(&f, &self.domain, 50))
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("quantile level {alpha} outside (0, 1)")))
    }
}

pub fn ackley(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
}

pub fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let d = w.len();
    let mut f = (PI * w[0]).sin().powi(2);
    for wi in &w[..d - 1] {
        f += (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2));
    }
    let wd = w[d - 1];
    f + (wd - 1.0).powi(2) * (1.0 + (2.0 * PI * wd).sin().powi(2))
}

fn argmin_1d(f: &impl Fn(&[f64]) -> f64, lo: f64, hi: f64, grid: usize) -> f64 {
    let step = (hi - lo) / (grid - 1) as f64;
    let (best, _) = (0..grid)
        .map(|i| (i, f(&[lo + step * i as f64])))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let mut a = (lo + step * best.saturating_sub(1) as f64).max(lo);
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if f(&[c]) < f(&[d]) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let mid = 0.5 * (a + b);
    let grid_x = lo + step * best as f64;
    if f(&[mid]) <= f(&[grid_x]) {
        mid
    } else {
        grid_x
    }
}

fn argmin_multistart(f: &impl Fn(&[f64]) -> f64, domain: &BoxDomain, starts: usize) -> Vec<f64> {
    let d = domain.dim();
    let mut candidates: Vec<Vec<f64>> = if d == 2 {
        let n = 401;
        let mut pts = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                pts.push(domain.from_unit(&[i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64]));
            }
        }
        pts
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a11_a5e7);
        (0..20_000 * d)
            .map(|_| {
                let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                domain.from_unit(&u)
            })
            .collect()
    };
    // Structured points where the built-in losses have their minima.
    for c in [0.0, 1.0] {
        let p = vec![c; d];
        if domain.contains(&p) {
            candidates.push(p);
        }
    }
    let mut scored: Vec<(f64, Vec<f64>)> = candidates.into_iter().map(|p| (f(&p), p)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let opts = NelderMeadOptions { max_evals: 400 * d, ftol: 1e-13, xtol: 1e-10 };
    let widths = domain.widths();
    scored
        .iter()
        .take(starts)
        .map(|(_, p)| {
            let step: Vec<f64> = widths.iter().map(|w| w * 0.01).collect();
            nelder_mead::minimize_bounded(f, p, &step, &domain.lower, &domain.upper, &opts)
        })
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .map(|r| r.x)
        .expect("at least one start")
}

/// Position of a replication sequence in the simulation randomness.
///
/// Replication `c` at design point `p` under `master_seed` always draws the
/// same randomness, so simulations can be replayed, split or parallelized
/// without changing results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub point_index: u64,
    pub replication_counter: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, point_index: u64) -> Self {
        RngStream { master_seed, point_index, replication_counter: 0 }
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.point_index);
        rng.set_word_pos(self.replication_counter as u128 * WORDS_PER_REPLICATION);
        rng
    }

    /// `n` standard normal draws, one Box-Muller pair (cosine branch) per
    /// replication slot.
    pub fn standard_normals(&mut self, n: usize) -> Vec<f64> {
        let mut rng = self.generator();
        let out = (0..n)
            .map(|_| {
                let u1 = open_unit(rng.next_u64());
                let u2 = open_unit(rng.next_u64());
                (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            })
            .collect();
        self.replication_counter += n as u64;
        out
    }
}

/// Uniform in (0, 1) from the top 53 bits, never exactly zero.
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Derive an independent 64-bit seed from `(base, index)` with splitmix64.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn zero_noise_exp1_at_shift_point() {
        let p = LossProblem::exp1().with_constant_scale(0.0);
        let mut s = RngStream::new(1, 0);
        let v = p.simulate(&[0.02], 3, &mut s).unwrap();
        assert_eq!(v, vec![5.0, 5.0, 5.0]);
        assert_eq!(s.replication_counter, 3);
    }

    #[test]
    fn ackley_origin_lognormal_scale() {
        let p = LossProblem::ackley_logn(5);
        let origin = [0.0; 5];
        assert!(ackley(&origin).abs() < 1e-12);
        assert!((p.noise_scale(&origin) - 1.65).abs() < 1e-12);
        let mut s = RngStream::new(42, 3);
        let logs: Vec<f64> = p.simulate(&origin, 100_000, &mut s).unwrap().iter().map(|v| v.ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // standard error of the mean is 1.65 / sqrt(1e5) ~ 0.0052
        assert!(mean.abs() < 0.02, "log-mean {mean}");
        assert!((sd - 1.65).abs() < 0.02, "log-sd {sd}");
    }

    #[test]
    fn replay_and_additivity() {
        let p = LossProblem::exp2();
        let mut a = RngStream::new(7, 11);
        let mut b = RngStream::new(7, 11);
        assert_eq!(p.simulate(&[0.3], 25, &mut a).unwrap(), p.simulate(&[0.3], 25, &mut b).unwrap());

        let mut whole = RngStream::new(9, 2);
        let all = p.simulate(&[0.7], 40, &mut whole).unwrap();
        let mut split = RngStream::new(9, 2);
        let mut parts = p.simulate(&[0.7], 13, &mut split).unwrap();
        parts.extend(p.simulate(&[0.7], 27, &mut split).unwrap());
        assert_eq!(all, parts);
        assert_eq!(whole, split);
    }

    #[test]
    fn distinct_points_get_distinct_streams() {
        let p = LossProblem::exp2();
        let a = p.simulate(&[0.5], 10, &mut RngStream::new(3, 0)).unwrap();
        let b = p.simulate(&[0.5], 10, &mut RngStream::new(3, 1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn argument_errors() {
        let p = LossProblem::exp1();
        let mut s = RngStream::new(0, 0);
        assert!(matches!(p.simulate(&[1.5], 3, &mut s), Err(Error::Domain { .. })));
        assert!(matches!(p.simulate(&[0.5], 0, &mut s), Err(Error::Argument(_))));
        assert!(p.true_quantile(&[0.5], 1.0).is_err());
        assert!(p.true_quantile(&[0.5], 0.0).is_err());
        assert!(BoxDomain::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn exp1_quantile_closed_form_and_empirical() {
        let p = LossProblem::exp1();
        let q = p.true_quantile(&[0.02], 0.6).unwrap();
        assert!((q - 5.080_12).abs() < 1e-5, "{q}");
        let draws = sorted(p.simulate(&[0.02], 1_000_000, &mut RngStream::new(5, 0)).unwrap());
        let emp = draws[600_000 - 1];
        assert!((emp - q).abs() < 0.01, "{emp} vs {q}");
    }

    #[test]
    fn median_of_symmetric_noise_is_mean() {
        for p in [LossProblem::exp1(), LossProblem::exp2(), LossProblem::fig1()] {
            let x = [0.37];
            assert!((p.true_quantile(&x, 0.5).unwrap() - p.mean(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn ackley_origin_high_quantile() {
        let p = LossProblem::ackley_logn(5);
        let q = p.true_quantile(&[0.0; 5], 0.99).unwrap();
        assert!((q - (1.65f64 * 2.326_347_874_040_841).exp()).abs() < 1e-9);
        assert!((q - 46.46).abs() < 0.01, "{q}");
        let draws = sorted(p.simulate(&[0.0; 5], 10_000_000, &mut RngStream::new(77, 0)).unwrap());
        let emp = draws[9_900_000 - 1];
        assert!((emp / q - 1.0).abs() < 0.02, "{emp} vs {q}");
    }

    #[test]
    fn known_optima_of_one_dimensional_problems() {
        let x1 = LossProblem::exp1().true_argmin(0.95).unwrap()[0];
        assert!((x1 - 0.258).abs() < 1e-3, "exp1 argmin {x1}");
        // The closed form puts this optimum at 0.7604; the quoted 0.765 is
        // within the true-selection tolerance of it but not within 1e-3.
        let x2 = LossProblem::exp2().true_argmin(0.95).unwrap()[0];
        assert!((x2 - 0.760_43).abs() < 1e-4, "exp2 argmin {x2}");
        assert!((x2 - 0.765).abs() < 0.005, "exp2 argmin {x2}");
    }

    #[test]
    fn ackley_constant_noise_median_argmin_is_origin() {
        let p = LossProblem::ackley_logn(2).with_constant_scale(1.0);
        let x = p.true_argmin(0.5).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-6), "{x:?}");
    }

    #[test]
    fn quantiles_monotone_in_level() {
        let problems = [
            LossProblem::fig1(),
            LossProblem::exp1(),
            LossProblem::exp2(),
            LossProblem::ackley_logn(2),
            LossProblem::rastrigin_logn(2),
            LossProblem::levy_logn(2),
        ];
        let levels = [0.01, 0.2, 0.5, 0.6, 0.75, 0.9, 0.95, 0.99];
        for p in &problems {
            for k in 0..20 {
                let u: Vec<f64> = (0..p.dim()).map(|j| ((k * 7 + j * 3) % 20) as f64 / 19.0).collect();
                let x = p.domain.from_unit(&u);
                let qs: Vec<f64> = levels.iter().map(|a| p.true_quantile(&x, *a).unwrap()).collect();
                assert!(qs.windows(2).all(|w| w[0] <= w[1]), "{:?} at {x:?}", p.id);
            }
        }
    }

    #[test]
    fn empirical_quantile_within_bahadur_band() {
        // 3 standard errors of sqrt(alpha (1 - alpha) / (n f^2)).
        let n = 1_000_000usize;
        for (p, x, alpha) in [
            (LossProblem::exp2(), vec![0.4], 0.95),
            (LossProblem::fig1(), vec![1.1], 0.75),
            (LossProblem::levy_logn(2), vec![2.0, -3.0], 0.9),
        ] {
            let q = p.true_quantile(&x, alpha).unwrap();
            let se = (alpha * (1.0 - alpha) / (n as f64 * p.density(&x, q).powi(2))).sqrt();
            let draws = sorted(p.simulate(&x, n, &mut RngStream::new(123, 9)).unwrap());
            let emp = draws[(alpha * n as f64) as usize - 1];
            assert!((emp - q).abs() < 3.0 * se, "{:?}: {emp} vs {q} (se {se})", p.id);
        }
    }

    #[test]
    fn custom_table_interpolates_linearly() {
        let axes = vec![vec![0.0, 1.0, 2.0]];
        let mean = GridTable::new(axes.clone(), vec![0.0, 2.0, 0.0]).unwrap();
        let scale = GridTable::new(axes, vec![1.0, 1.0, 3.0]).unwrap();
        let p = LossProblem::custom(mean, scale, NoiseFamily::Normal).unwrap();
        assert!((p.mean(&[0.5]) - 1.0).abs() < 1e-12);
        assert!((p.noise_scale(&[1.5]) - 2.0).abs() < 1e-12);
        assert_eq!(p.domain, BoxDomain::cube(1, 0.0, 2.0));

        let axes2 = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let t = GridTable::new(axes2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        // f = 2 x + y on the unit square
        assert!((t.eval(&[0.25, 0.5]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_custom_scale() {
        let axes = vec![vec![0.0, 1.0]];
        let mean = GridTable::new(axes.clone(), vec![0.0, 0.0]).unwrap();
        let scale = GridTable::new(axes, vec![1.0, 0.0]).unwrap();
        assert!(LossProblem::custom(mean, scale, NoiseFamily::Normal).is_err());
    }
}
