use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("distribution family mismatch: {0}")]
    FamilyMismatch(String),
    #[error("importance ratio undefined: behavior probability is zero at state {state}, action {action}")]
    ZeroBehaviorProbability { state: usize, action: usize },
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("oracle size limit exceeded: {0}")]
    OracleLimit(String),
    #[error("linear system is singular")]
    Singular,
    #[error("missing data: {0}")]
    Missing(String),
    #[error("duplicate snapshot id {0}")]
    DuplicateSnapshot(u64),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
