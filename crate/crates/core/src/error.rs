use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("kernel spec parse error at `{token}`: {reason}")]
    KernelParse { token: String, reason: String },

    #[error("Matérn smoothness nu={0} needs the general Bessel path, which is disabled")]
    UnsupportedSmoothness(f64),

    #[error("bisection bracket not found for half-width (kernel profile is not monotone)")]
    BracketNotFound,

    #[error("matrix order {order} exceeds the configured maximum {max}")]
    TooLarge { order: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Cholesky factorization failed at maximum jitter {jitter:e}")]
    FactorizationFailed { jitter: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("eigensolver did not converge after {iterations} iterations (estimate {estimate}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("quadrature did not reach tolerance (estimate {estimate}, error {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("threshold prefactor c0={c0} exceeds sqrt(N)={sqrt_n} for the full threshold form")]
    PrefactorTooLarge { c0: f64, sqrt_n: f64 },

    #[error("lengthscale {lambda} is outside the validity region (must be below {limit})")]
    LengthscaleTooLarge { lambda: f64, limit: f64 },

    #[error("reference matrix is zero")]
    ZeroMatrix,

    #[error("io error: {0}")]
    Io(String),

    #[error("malformed ensemble file: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
