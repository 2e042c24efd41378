use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cokrige::ModelDump;

/// Column order of the per-iteration CSV.
pub const CSV_COLUMNS: [&str; 10] = ["k", "x_next", "alloc_total", "h", "pi", "B", "A", "xhat", "y_hat", "v_true"];

/// One completed iteration of the sequential loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub x_next: Vec<f64>,
    /// Replications added per design point this iteration (the new point's
    /// initial replications included), indexed like the design.
    pub allocation: Vec<u64>,
    /// Guiding level, 1-based.
    pub h: usize,
    /// Modeled levels, 1-based.
    pub pi: Vec<usize>,
    pub budget: u64,
    pub remaining: u64,
    /// Cumulative simulator evaluations after this iteration.
    pub evals: u64,
    pub xhat: Vec<f64>,
    /// Estimate of the objective quantile at `xhat`.
    pub y_hat: f64,
    /// True objective quantile at `xhat`.
    pub v_true: f64,
    pub c0: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config_hash: String,
    pub seed: u64,
    pub problem: String,
    pub algorithm: String,
    pub levels: Vec<f64>,
    pub total_budget: u64,
    pub initial_design: Vec<Vec<f64>>,
    pub initial_evals: u64,
    pub initial_xhat: Vec<f64>,
    pub initial_y_hat: f64,
    pub initial_v_true: f64,
    pub initial_c0: f64,
}

/// Full record of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    pub final_x: Vec<f64>,
    pub final_y_hat: f64,
    pub final_v_true: f64,
    /// The model fitted on the initial design.
    pub initial_model: ModelDump,
}

fn join(values: impl IntoIterator<Item = impl std::fmt::Display>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

impl TraceRow {
    pub fn alloc_total(&self) -> u64 {
        self.allocation.iter().sum()
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.k,
            join(&self.x_next),
            self.alloc_total(),
            self.h,
            join(&self.pi),
            self.budget,
            self.remaining,
            join(&self.xhat),
            self.y_hat,
            self.v_true
        )
    }
}

impl RunTrace {
    /// Per-iteration CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.csv_line());
        }
        out
    }

    /// Cumulative evaluations per row.
    pub fn eval_counts(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.evals).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_layout() {
        let row = TraceRow {
            k: 3,
            x_next: vec![0.25, -1.5],
            allocation: vec![1, 2, 20],
            h: 2,
            pi: vec![1, 2],
            budget: 23,
            remaining: 100,
            evals: 900,
            xhat: vec![0.5, 0.5],
            y_hat: 1.25,
            v_true: 1.5,
            c0: 0.1,
            flags: vec![],
        };
        assert_eq!(row.csv_line(), "3,0.25;-1.5,23,2,1;2,23,100,0.5;0.5,1.25,1.5");
    }
}
