use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty history: {0}")]
    EmptyHistory(String),

    #[error("exact solver budget exceeded ({leaves} leaves > {budget}); use the greedy scheduler")]
    BudgetExceeded { leaves: u128, budget: u128 },

    #[error("schedule regression: expected cost {expected} exceeds regulation cost {regulation}")]
    ScheduleRegression { regulation: f64, expected: f64 },

    #[error("market coverage: {0}")]
    Coverage(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of input data rather than by
    /// arguments or the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Conflict(_)
                | Error::Schema(_)
                | Error::Validation(_)
                | Error::Invariant(_)
                | Error::InsufficientData(_)
                | Error::DegenerateData(_)
                | Error::EmptyHistory(_)
                | Error::Coverage(_)
                | Error::Csv(_)
        )
    }
}
