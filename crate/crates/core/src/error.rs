use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty expression")]
    EmptyExpression,

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("weight is negative at u = {u}: f(u) = {value}")]
    NegativeWeight { u: f64, value: f64 },

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("quadrature did not converge after {subdivisions} subdivisions (value {value}, error estimate {error})")]
    NonConvergence {
        value: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("non-finite integrand value at {at:?}")]
    NonFiniteIntegrand { at: Vec<f64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance entry ({i}, {j}) failed: {source}")]
    MatrixEntry {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("profile is not flat and increasing near beta_max: {0}")]
    InteriorMaximum(String),

    #[error("unknown model family `{0}`")]
    UnknownFamily(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyExpression
            | Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::InvalidParameter(_)
            | Error::UnknownFamily(_) => ErrorKind::Usage,
            Error::DimensionMismatch { .. }
            | Error::Degenerate(_)
            | Error::Data(_)
            | Error::MissingColumn(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::MatrixEntry { source, .. } => source.kind(),
            _ => ErrorKind::Numerical,
        }
    }
}
