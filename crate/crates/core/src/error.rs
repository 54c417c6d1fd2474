use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical failure in {what} at argument {at}")]
    NumericalFailure { what: String, at: f64 },
    #[error("singular evaluation: {0}")]
    Singularity(String),
    #[error("interval [{lo}, {hi}] touches the origin; the Lévy measure has infinite mass there")]
    InfiniteMass { lo: f64, hi: f64 },
    #[error("assumption {hypothesis} violated at {witness}: {detail}")]
    Assumption { hypothesis: String, witness: String, detail: String },
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("parametrix series diverges at order {order} (term ratio {ratio:.3}); try a shorter horizon")]
    Divergence { order: usize, ratio: f64 },
    #[error("inconsistent result: {0}")]
    Inconsistency(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("rejection sampler exceeded its budget of {0} proposals")]
    RejectionBudget(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
