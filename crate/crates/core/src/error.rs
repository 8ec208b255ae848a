use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not hermitian: entry ({row}, {col}) deviates from the conjugate of ({col}, {row}) by {deviation:e}")]
    NotHermitian {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error(
        "cannot match exact eigenvector to degenerate eigenvector {index}: best overlap {best_overlap:.4} < 1/sqrt(2); \
         the shifts are too large for the linear expansion, try a smaller delta"
    )]
    AmbiguousMatching { index: usize, best_overlap: f64 },

    #[error("initial state must be normalized, got norm {norm}")]
    NonUnitState { norm: f64 },

    #[error("time grid must be strictly increasing (violated at index {index})")]
    NonMonotoneGrid { index: usize },

    #[error("trajectories live on different time grids")]
    GridMismatch,

    #[error("propagation did not converge: final-state change {change:e} after {substeps} substeps per interval")]
    NotConverged { change: f64, substeps: usize },

    #[error("dark-phase probe needs a tripod (3 lower, 1 upper state), got {lower} lower and {upper} upper")]
    NotTripod { lower: usize, upper: usize },

    #[error("invariant violated: {invariant} ({detail})")]
    Contract { invariant: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidModel(_)
                | Error::InvalidSystem(_)
                | Error::NonUnitState { .. }
                | Error::NonMonotoneGrid { .. }
                | Error::NotTripod { .. }
        )
    }
}
