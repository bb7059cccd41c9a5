use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum TsceError {
    #[error("variable not found: {0}")]
    VariableNotFound(String),

    #[error("graph validation failed: {0}")]
    InvalidGraph(String),

    #[error("no context matched row: {0}")]
    NoContextMatched(String),

    #[error("predicate parse error: {0}")]
    PredicateParse(String),

    #[error("invalid question: {0}")]
    InvalidQuestion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("tree operation failed: {0}")]
    TreeOp(String),

    #[error("discovery failed: {0}")]
    Discovery(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("lexicon error: {0}")]
    Lexicon(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TsceError>;
