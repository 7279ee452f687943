use thiserror::Error;

/// Errors raised anywhere in the simulation, sensitivity and information pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("unknown mode id {0}")]
    UnknownMode(usize),

    #[error("algebraic solve failed after {iterations} iterations (residual {residual:e})")]
    AlgebraicNonConvergence { iterations: usize, residual: f64 },

    #[error("algebraic jacobian is singular at t = {t}")]
    SingularAlgebraicJacobian { t: f64 },

    #[error("guard does not change sign over [{t_lo}, {t_hi}] in the requested direction")]
    NoSignChange { t_lo: f64, t_hi: f64 },

    #[error("ambiguous event: transitions {first} and {second} fire within {dt:e} s of each other at t = {t}")]
    AmbiguousEvent {
        first: usize,
        second: usize,
        t: f64,
        dt: f64,
    },

    #[error("grazing contact at t = {t}: guard rate {rate:e} is below the transversality floor")]
    Grazing { t: f64, rate: f64 },

    #[error("event cap of {0} exceeded (Zeno behaviour suspected)")]
    TooManyEvents(usize),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::InvalidArgument(_)
                | Error::ShapeMismatch { .. }
                | Error::UnknownMode(_)
                | Error::Config(_)
                | Error::NotSymmetric(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
