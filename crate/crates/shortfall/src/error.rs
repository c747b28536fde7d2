//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the shortfall toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A cell of an input file could not be parsed.
    #[error("parse error at row {row}, column {column} ({column_name}): {message}")]
    Parse {
        /// 1-based data row (the header is row 0).
        row: usize,
        /// 1-based column.
        column: usize,
        /// Column name from the header, when known.
        column_name: String,
        /// What went wrong.
        message: String,
    },

    /// Input data violates a structural invariant (ordering, duplicates, missing values).
    #[error("validation error: {0}")]
    Validation(String),

    /// A date window selected no observations.
    #[error("empty window: {0}")]
    EmptyWindow(String),

    /// Not enough history to seed an estimator.
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    /// The tail holds no scenarios: `K = floor(T(1-p)) = 0`.
    #[error("degenerate tail: confidence {confidence} leaves no tail scenarios for sample size {sample_size}")]
    DegenerateTail {
        /// Requested confidence level.
        confidence: f64,
        /// Sample size the tail was computed from.
        sample_size: usize,
    },

    /// An iterative numerical procedure failed to converge or lost precision.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The constraint set admits no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The objective is unbounded over the feasible set.
    #[error("unbounded: {0}")]
    Unbounded(String),

    /// A statistic that divides by volatility was given a flat series.
    #[error("zero volatility in series")]
    ZeroVolatility,

    /// Rolling regression hit a window with a flat explanatory series.
    #[error("zero variance: {0}")]
    ZeroVariance(String),

    /// An angle was requested between vectors where one has zero norm.
    #[error("zero-length weight vector")]
    ZeroVector,

    /// A report was queried for a confidence level it does not contain.
    #[error("unknown confidence level {0}")]
    UnknownConfidence(f64),

    /// A regime definition matched no dates of the backtest.
    #[error("empty regime: {0}")]
    EmptyRegime(String),

    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used by the CLI error channel.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::EmptyWindow(_) => "empty_window",
            Error::InsufficientHistory(_) => "insufficient_history",
            Error::DegenerateTail { .. } => "degenerate_tail",
            Error::Numerical(_) => "numerical",
            Error::Infeasible(_) => "infeasible",
            Error::Unbounded(_) => "unbounded",
            Error::ZeroVolatility => "zero_volatility",
            Error::ZeroVariance(_) => "zero_variance",
            Error::ZeroVector => "zero_vector",
            Error::UnknownConfidence(_) => "unknown_confidence",
            Error::EmptyRegime(_) => "empty_regime",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Io(_) => "io",
        }
    }

    /// CLI exit code contract: 2 input error, 3 infeasible, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            Error::Numerical(_) | Error::Unbounded(_) => 4,
            _ => 2,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
