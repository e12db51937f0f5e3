use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value at node (i={i}, j={j})")]
    NonFinite { i: usize, j: usize },

    #[error("level t={t} outside field range [{min}, {max}]: empty contour")]
    EmptyContour { t: f64, min: f64, max: f64 },

    #[error("degenerate map: |u| = {modulus:.3e} at node (i={i}, j={j})")]
    Degenerate { modulus: f64, i: usize, j: usize },

    #[error(
        "per-line winding disagreement (lines vote {votes:?}); refine the grid before classifying"
    )]
    WindingDisagreement { votes: Vec<i64> },

    #[error("dimension n={n} not supported here: {reason}")]
    Dimension { n: usize, reason: String },

    #[error("no twist solution: {0}")]
    NoTwistSolution(String),

    #[error("flow trajectory left the annulus [{lo}, {hi}] at node (i={i}, j={j}); reduce the step size or the flow time")]
    FlowEscaped { lo: f64, hi: f64, i: usize, j: usize },

    #[error("interpolation target (r={r:.6}, theta={theta:.6}) outside the grid annulus [{a}, {b}]")]
    OutOfRange { r: f64, theta: f64, a: f64, b: f64 },

    #[error("conjugate gradients failed to converge: residual {residual:.3e} after {iterations} iterations (history tail {tail:?})")]
    CgDiverged {
        residual: f64,
        iterations: usize,
        tail: Vec<f64>,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
