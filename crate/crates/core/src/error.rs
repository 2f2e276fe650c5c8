use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {left_nx}x{left_ny} vs {right_nx}x{right_ny}")]
    GridMismatch {
        left_nx: usize,
        left_ny: usize,
        right_nx: usize,
        right_ny: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field has {got} values, grid needs {expected}")]
    FieldLength { expected: usize, got: usize },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("diffusion coefficient {value} at node {node} is not positive")]
    Coercivity { node: usize, value: f64 },

    #[error("Robin coefficient is identically zero; operator is singular")]
    SingularRobin,

    #[error("negative Robin coefficient {value} at boundary node {node}")]
    NegativeRobin { node: usize, value: f64 },

    #[error("linear solve failed: residual {residual:e} above tolerance {tolerance:e}")]
    LinearSolve { residual: f64, tolerance: f64 },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residuals: {history:?})"
    )]
    NewtonDivergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("optimization did not converge after {iterations} iterations (last gap {last_gap:e})")]
    NonConvergence {
        iterations: usize,
        last_gap: f64,
        gap_history: Vec<f64>,
    },

    #[error("line search failed at iteration {iteration} (gap {gap:e})")]
    LineSearch { iteration: usize, gap: f64 },

    #[error("primal gap {gap:e} is negative at iteration {iteration}")]
    NegativeGap { iteration: usize, gap: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("monotonicity guard violated: d_y + xi_y = {value:e} at x = ({x1}, {x2}), y = {y}")]
    MonotonicityGuard {
        x1: f64,
        x2: f64,
        y: f64,
        value: f64,
    },

    #[error(
        "perturbation not convex in u: eta_uu = {value:e} at x = ({x1}, {x2}), y = {y}, u = {u}"
    )]
    ConvexityGuard {
        x1: f64,
        x2: f64,
        y: f64,
        u: f64,
        value: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("experiment aborted at sweep value {value:e}: {source}")]
    Sweep {
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
