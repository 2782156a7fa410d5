use thiserror::Error;

/// Errors raised by the solvers, certificates and problem loaders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular operator (pivot {pivot:.3e}, condition estimate {condition:.3e})")]
    SingularOperator { pivot: f64, condition: f64 },

    #[error("operator flagged self-adjoint is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("operator is not self-adjoint positive semidefinite (lambda_min {lambda_min:.3e})")]
    NonPsdOperator { lambda_min: f64 },

    #[error("linearized operator is singular (sigma_min {sigma_min:.3e})")]
    SingularLinearization { sigma_min: f64 },

    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },

    #[error("target not reached before t_max = {t_max}")]
    TMaxReached { t_max: f64 },

    #[error("check not applicable: {0}")]
    NotApplicable(String),

    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),

    #[error("right-hand side is not in the range of the operator (relative residual {0:.3e})")]
    Inconsistent(f64),

    #[error("inner solve failed at continuation step {step}: {reason}")]
    InnerSolveFailed { step: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error in {context}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        context: String,
        line: Option<usize>,
        message: String,
    },

    #[error("tagged hypothesis {tag} failed verification: {detail}")]
    CertificateMismatch { tag: String, detail: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
