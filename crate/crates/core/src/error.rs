use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index}); increase the ridge parameter")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("activation {0} has no registered derivative rule of the requested order")]
    UnsupportedOperator(String),

    #[error("loss evaluated to a non-finite value ({0})")]
    NonFiniteLoss(f64),

    #[error("nonlinear operator needs the current field values at the PDE points")]
    MissingLinearization,

    #[error("Picard iteration {0} produced non-finite field values")]
    NonFiniteIteration(usize),

    #[error("quadrature did not reach tolerance {tol:e} at x={x}, t={t}")]
    QuadratureNonConvergent { x: f64, t: f64, tol: f64 },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("reference solution is identically zero")]
    ZeroReference,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
