use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure while computing a single stream value.
///
/// These never abort a monitor: the offending `(stream, instant)` is poisoned
/// with the error and anything reading it inherits the poison.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum EvalError {
    #[error("key {0} not present in map")]
    MissingKey(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow in `{0}`")]
    Overflow(String),
    #[error("`{func}`: {msg}")]
    Type { func: String, msg: String },
    #[error("`{0}` of an empty collection")]
    Empty(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("nested monitor: {0}")]
    Nested(String),
    #[error("retrieval: {0}")]
    Retrieval(String),
    #[error("install of parameter {param} failed: {msg}")]
    Install { param: String, msg: String },
    #[error("instance {param}: {msg}")]
    Instance { param: String, msg: String },
    #[error("stream `{stream}` at instant {instant} is not available")]
    Unavailable { stream: String, instant: i64 },
}

impl EvalError {
    pub fn type_error(func: &str, msg: impl Into<String>) -> Self {
        EvalError::Type { func: func.to_string(), msg: msg.into() }
    }
}
