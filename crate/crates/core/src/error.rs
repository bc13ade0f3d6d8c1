use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    #[error("{function} did not converge after {terms} terms")]
    NonConvergence { function: &'static str, terms: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },

    #[error("response lies in the nuisance column space")]
    ZeroResidual,

    #[error("absolute continuity violated at point {point}")]
    AbsoluteContinuity { point: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("optimizer hit {iterations} iterations (best value {best})")]
    MaxIterations { iterations: usize, best: f64 },

    #[error("non-finite statistic at replication {index}")]
    NonFinite { index: usize },

    #[error("observation {index}: {source}")]
    AtObservation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stream exceeds the {limit} observation limit")]
    StreamTooLong { limit: usize },

    #[error("unknown suite {0:?}")]
    UnknownSuite(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no sign change of f - 1 on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
}

impl Error {
    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
