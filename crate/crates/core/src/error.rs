use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown game '{name}', valid names: {valid}")]
    UnknownGame { name: String, valid: String },

    #[error("game table: {0}")]
    BadGameTable(String),

    #[error("{kind:?} reward needs game payoffs but the step carries none")]
    MissingPayoff { kind: crate::rewards::RewardKind },

    #[error("reward range for {kind:?} on '{game}' is degenerate (min == max == {value}), cannot normalize")]
    DegenerateRange {
        kind: crate::rewards::RewardKind,
        game: String,
        value: f64,
    },

    #[error("batch has {batch} records but {advantages} advantages")]
    LengthMismatch { batch: usize, advantages: usize },

    #[error("{path} line {line}: {msg}")]
    ConfigParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path} line {line}: unknown key '{key}'")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("co-training configs disagree: {0}")]
    CotrainMismatch(String),

    #[error("policy file {path}: {msg}")]
    BadPolicyFile { path: String, msg: String },

    #[error("{path}: {msg}")]
    BadLog { path: String, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
