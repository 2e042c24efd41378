//! Multi-level quantile simulation optimization.
//!
//! The crate is organized around the pipeline that turns raw simulator output
//! into a search decision:
//!
//! - [`sim_core`]: stochastic test losses, counter-based RNG streams and
//!   closed-form quantile oracles.
//! - [`quantile_est`]: order-statistic quantile estimates and sectioning
//!   noise variance/covariance panels.
//! - [`cokrige`]: the multi-level stochastic co-kriging metamodel with
//!   penalized (non-crossing) likelihood fitting.
//! - [`optimizer`]: the sequential EI + OCBA loop with level promotion, and
//!   its single-level baseline.
//! - [`bench`]: macro-replication runner, optimality-gap metrics and
//!   persistence.
//!
//! Data-parallel inner loops (macro-replications, candidate scoring,
//! multistart fitting, estimator Monte Carlo) go through [`exec`], which uses
//! rayon when the `parallel` feature is enabled and falls back to plain
//! iterators otherwise.

pub mod bench;
pub mod cokrige;
pub mod design;
pub mod error;
pub mod exec;
pub mod nelder_mead;
pub mod normal;
pub mod optimizer;
pub mod quantile_est;
pub mod sim_core;

pub use error::{Error, Result};
