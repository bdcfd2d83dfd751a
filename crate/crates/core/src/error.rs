use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SedError {
    #[error("unstable system: rho = {rho} must be strictly below 1")]
    UnstableSystem { rho: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("state ({m}, {n}) is missing neighbor ({nm}, {nn}) required by its balance equation")]
    MissingNeighbor { m: i64, n: i64, nm: i64, nn: i64 },

    #[error("division by zero in {0}")]
    DivideByZero(&'static str),

    #[error("root count mismatch: expected {expected} roots inside the disk of radius {radius:e}, found {found}")]
    RootCountMismatch {
        expected: usize,
        found: usize,
        radius: f64,
    },

    #[error("branch quadratic has a double root at alpha = {0}")]
    DegenerateQuadratic(String),

    #[error("negative-quadrant eigenvector is degenerate (F(f-) = F(f+))")]
    DegenerateEigenvector,

    #[error("linear system is numerically singular (condition estimate {condition:e}) in {context}")]
    SingularSystem { condition: f64, context: String },

    #[error("spectral radius iteration did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("convergence index search exhausted at cap {0}")]
    SearchExhausted(usize),

    #[error("series evaluation needs {requested} compensation passes but only {built} are built")]
    DepthExceeded { requested: usize, built: usize },

    #[error("state ({m}, {n}) did not reach the accuracy target within {l_max} passes (last relative gap {gap:e})")]
    NoConvergenceWithinLmax {
        m: i64,
        n: i64,
        l_max: usize,
        gap: f64,
    },

    #[error("total probability mass {0:e} is not positive")]
    NonPositiveMass(f64),

    #[error("probability at ({m}, {n}, {r}) is negative: {value:e}")]
    NegativeProbability { m: i64, n: i64, r: usize, value: f64 },

    #[error("requested grid {q1max}x{q2max} leaves the truncation triangle T_{k}")]
    GridExceedsTruncation { q1max: u64, q2max: u64, k: usize },

    #[error("truncated generator is singular")]
    SingularGenerator,

    #[error("truncation box too small: boundary mass {boundary_mass:e} exceeds {limit:e}")]
    BoxTooSmall { boundary_mass: f64, limit: f64 },

    #[error("at tree node (level {level}, index {index}): {source}")]
    TreePath {
        level: usize,
        index: usize,
        #[source]
        source: Box<SedError>,
    },

    #[error("{step}: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<SedError>,
    },
}

impl SedError {
    pub(crate) fn at_node(self, level: usize, index: usize) -> Self {
        SedError::TreePath {
            level,
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_step(self, step: &'static str) -> Self {
        SedError::Step {
            step,
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) signals bad user input rather
    /// than a numerical failure.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            SedError::UnstableSystem { .. }
            | SedError::InvalidParam(_)
            | SedError::GridExceedsTruncation { .. } => true,
            SedError::TreePath { source, .. } | SedError::Step { source, .. } => {
                source.is_invalid_input()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SedError>;
