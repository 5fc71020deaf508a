use thiserror::Error;

/// Errors raised across the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (dimensions, ranges, empty classes).
    #[error("input error: {0}")]
    Input(String),

    /// Numerical breakdown: non-finite values, backtracking exhaustion, eigen failure.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Strict regularity condition of the theory schedule does not hold.
    #[error("regularity condition violated: rho = {rho} >= 1 (theory schedule unavailable)")]
    RegularityViolated { rho: f64 },

    /// Theory schedule requested with an iteration budget below the threshold.
    #[error("T = {t} too small for the theory schedule: {reason}")]
    BudgetTooSmall { t: usize, reason: String },

    /// A line in a sparse dataset file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Attach an outer-iteration index to a numerical error.
    pub(crate) fn at_outer(self, t: usize) -> Self {
        match self {
            Error::Numerical(msg) => Error::Numerical(format!("outer iteration {t}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
