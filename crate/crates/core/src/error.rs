use std::io;

use thiserror::Error;

/// Errors raised across the runtime, the counting engine and the data tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape, layout or input contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration (network, inflation, scheme, flags) is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Data failed validation (manifest, layout, event track).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Non-finite values or an out-of-domain numeric input.
    #[error("numeric failure{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Numeric { layer: Option<usize>, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Numeric { layer, message: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
