use thiserror::Error;

/// Errors raised by the model, generator, estimation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },

    #[error("matrix is singular (|det| = {det_abs:.3e})")]
    SingularMatrix { det_abs: f64 },

    #[error("resolvent denominator vanishes (|det(H - w)| = {denom_abs:.3e})")]
    SingularDenominator { denom_abs: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("estimator has zero sensitivity (slope {slope:.3e})")]
    ZeroSensitivity { slope: f64 },

    #[error("phase is undefined: argument vanishes")]
    UndefinedPhase,

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by evaluating the model at (or next to) a resolvent pole.
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix { .. } | Error::SingularDenominator { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
