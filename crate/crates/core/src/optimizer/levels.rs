use serde::{Deserialize, Serialize};

/// Accept sets, guiding level and modeled level subset (all 0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelState {
    /// `accept[l]` holds the (sorted) indices of points whose level-`l`
    /// estimate is accurate enough.
    pub accept: Vec<Vec<usize>>,
    pub h: usize,
    pub pi: Vec<usize>,
}

impl LevelState {
    /// Fresh state: guide with the first level only.
    pub fn initial(num_levels: usize) -> Self {
        LevelState { accept: vec![Vec::new(); num_levels], h: 0, pi: vec![0] }
    }
}

/// Rebuild the accept sets from per-point noise variances (`variances[i][l]`)
/// and the tolerance `c0`. A point joins every set up to its highest accurate
/// level. The guiding level never drops below `h_prev`.
pub fn update_levels(variances: &[Vec<f64>], c0: f64, h_prev: usize) -> LevelState {
    let m = variances.first().map_or(1, Vec::len);
    let mut accept = vec![Vec::new(); m];
    for (i, v) in variances.iter().enumerate() {
        if let Some(top) = (0..m).rev().find(|&l| v[l] <= c0) {
            for set in accept.iter_mut().take(top + 1) {
                set.push(i);
            }
        }
    }
    let highest = (0..m).rev().find(|&l| !accept[l].is_empty()).unwrap_or(0);
    let h = highest.max(h_prev).min(m - 1);
    let pi = select_levels(&accept, h);
    LevelState { accept, h, pi }
}

/// Level `j <= h` is modeled unless some level in `(j, h]` has the same
/// accept set; `h` itself is always kept.
pub fn select_levels(accept: &[Vec<usize>], h: usize) -> Vec<usize> {
    (0..=h).filter(|&j| !(j + 1..=h).any(|l| accept[l] == accept[j])).collect()
}
