//! Standard normal helpers.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::OnceLock;

fn standard() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("unit normal"))
}

pub fn pdf(z: f64) -> f64 {
    standard().pdf(z)
}

pub fn cdf(z: f64) -> f64 {
    standard().cdf(z)
}

/// Inverse of the standard normal CDF. `p` must lie in (0, 1).
pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((quantile(0.6) - 0.253_347_103_135_799_7).abs() < 1e-12);
        assert!((quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!((quantile(0.99) - 2.326_347_874_040_840_8).abs() < 1e-12);
    }
}
