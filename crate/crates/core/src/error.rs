//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown scheme '{name}'; available: {available}")]
    UnknownScheme { name: String, available: String },

    #[error("invalid tableau: {0}")]
    InvalidTableau(String),

    #[error("cannot parse '{0}' as a rational number")]
    BadRational(String),

    #[error("grid too small: need at least 3 cells, got {cells}")]
    GridTooSmall { cells: usize },

    #[error("scheme is not of type A: implicit diagonal entry a[{stage}][{stage}] is zero")]
    NotTypeA { stage: usize },

    #[error("scheme must be implicit stiffly accurate and of type A for the eps = 0 multiplier system: {0}")]
    RequiresIsa(String),

    #[error("eps = 0 requires blending weight phi = 1 (got phi = {phi}); the upwind correction carries a 1/eps factor")]
    DivisionGuard { phi: f64 },

    #[error("non-type-A scheme refused for eps = {eps} < 1e-6: stage equations divide by eps^2")]
    EpsTooSmall { eps: f64 },

    #[error("inconsistent boundary closure set: {0}")]
    ClosureConflict(String),

    #[error("singular tridiagonal system: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("field length {got} does not match grid cell count {expected}")]
    GridMismatch { expected: usize, got: usize },

    #[error("control length {got} does not match step count {expected}")]
    ControlLength { expected: usize, got: usize },

    #[error("adjoint trajectory was computed for a different configuration ({0})")]
    StaleAdjoint(String),

    #[error("non-finite value encountered in {context} at step {step}")]
    NonFinite { context: String, step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration file {path}: {source}")]
    ConfigFile { path: String, source: Box<Error> },

    #[error("solver failed at step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
