//! Stationary distribution of a two-server queue with shortest-expected-delay
//! routing, computed by the compensation approach.

pub mod compensation;
pub mod convergence;
pub mod error;
pub mod kernel;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod solver;

pub use error::{Result, SedError};
pub use compensation::{grow_tree, initial_solution, Bundle, HorizontalVector, Node, Term, TermKind, TermTree};
pub use convergence::{compute_n, limit_coeffs, limit_roots, LimitConstants, LimitRoots, RatioKind};
pub use kernel::{BranchedRoot, EigenvectorNeg, EigenvectorPos, Side};
pub use model::{
    balance_residual, build_rate_matrices, from_internal, to_internal, validate_params, BalanceEquations,
    EquationFamily, InternalState, ModelParams, QueueState, RateMatrices,
};
pub use solver::{
    adaptive_l, boundary_solve, eval_series, heatmap, metrics, normalize, solve, Diagnostics, EquilibriumSolution,
    GapRule, Heatmap, Metrics, SolverConfig, StateRecord,
};
pub use oracle::{compare, oracle_solve, simulate, CompareReport, OracleSolution, SimConfig, SimEstimate, TruncationBox};
