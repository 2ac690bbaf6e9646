use thiserror::Error;

pub type Result<T, E = SlagError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SlagError {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point is not on the image of the Szoke map: {0}")]
    Inconsistent(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation requested outside the tabulated potential, or a table whose
    /// range would overflow `f64`.
    #[error("range error: {0}")]
    Range(String),

    #[error("volume-form calibration failed: relative spread {spread:e} >= {tol:e}")]
    Calibration { spread: f64, tol: f64 },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("point is outside the chart: {0}")]
    Chart(String),

    #[error("quadrature did not converge on [{a}, {b}] (estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("insufficient converged seeds: wanted {wanted}, got {got} ({diagnostics})")]
    InsufficientSeeds { wanted: usize, got: usize, diagnostics: String },

    #[error("immersion failure at sample {index}: frame rank {rank} < {expected} (a fundamental vector field is tangent to the level set)")]
    ImmersionFailure { index: usize, rank: usize, expected: usize },

    #[error("frame is not isotropic: max |omega| = {0:e}")]
    NotIsotropic(f64),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
