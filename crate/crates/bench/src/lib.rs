//! Parameter sets shared by the benchmarks.

use sedq_core::{validate_params, ModelParams};

/// Speed ratios and loads spanning light to heavy traffic.
pub const GRID: [(i64, f64); 6] = [(1, 0.3), (1, 0.8), (2, 0.3), (2, 0.8), (4, 0.3), (4, 0.8)];

pub fn params(s: i64, rho: f64) -> ModelParams {
    validate_params(s, rho, 0.4).expect("benchmark parameters are valid")
}

pub fn label(s: i64, rho: f64) -> String {
    format!("s{s}_rho{rho}")
}
