use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("illegal action {action} at t={t}")]
    IllegalAction { action: String, t: usize },

    #[error("episode exhausted: t={t} but the list only has {len} items")]
    EpisodeExhausted { t: usize, len: usize },

    #[error("invalid placement: {0}")]
    InvalidPlacement(String),

    #[error("slot ({row},{col}) is already occupied")]
    SlotConflict { row: usize, col: usize },

    #[error("inconsistent feedback: {0}")]
    InconsistentFeedback(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range for table with {rows} rows")]
    Index { index: usize, rows: usize },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("insufficient data: need {need} records, have {have}")]
    InsufficientData { need: usize, have: usize },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("enumeration of {size} assignments exceeds the cap of {cap}")]
    EnumerationCap { size: u128, cap: u128 },

    #[error("AUC undefined: {0}")]
    UndefinedAuc(&'static str),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
