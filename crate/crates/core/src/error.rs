use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecapError {
    #[error("invalid capture data: {0}")]
    InvalidData(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("history of length {len} is too long for an experiment with t = {t}")]
    HistoryTooLong { len: usize, t: u32 },

    #[error("unsupported number of occasions t = {0} (must be between 1 and 63)")]
    UnsupportedOccasions(u32),

    #[error("invalid quantifier: {0}")]
    InvalidQuantifier(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid cut recipe: {0}")]
    InvalidCuts(String),

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("population size {n_total} is smaller than the number of observed units {m}")]
    PopulationTooSmall { n_total: u64, m: u64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RecapError {
    fn from(e: std::io::Error) -> Self {
        RecapError::Io(e.to_string())
    }
}

impl From<csv::Error> for RecapError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        RecapError::Parse { line, msg: e.to_string() }
    }
}

impl From<serde_json::Error> for RecapError {
    fn from(e: serde_json::Error) -> Self {
        RecapError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RecapError>;
