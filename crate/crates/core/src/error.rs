use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every importance weight is zero (all log-weights are `-inf` or NaN).
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// Secondary weights of one partition collapsed (IPPF crossover).
    #[error("degenerate secondary weights in partition {0}")]
    DegeneratePartition(usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    /// All association hypotheses at an observer have zero posterior mass.
    #[error("degenerate association at observer {0}")]
    DegenerateAssociation(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
