//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariants.
    #[error("config error: {0}")]
    Config(String),

    /// A forward pass produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A routing decision or override references experts that do not exist.
    #[error("routing error: {0}")]
    Routing(String),

    /// An inference state does not satisfy the pending-token/KV contract.
    #[error("state error: {0}")]
    State(String),

    /// Shadow/main alignment payloads do not match the shadow's shape.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Malformed input data (records, prompts, checkpoints, spec files).
    #[error("input error: {0}")]
    Input(String),

    /// A cluster plan cannot be built from the given configuration.
    #[error("planning error: {0}")]
    Planning(String),

    /// A simulation invariant broke; carries a trace dump path or summary.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn routing(msg: impl Into<String>) -> Self {
        Error::Routing(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn alignment(msg: impl Into<String>) -> Self {
        Error::Alignment(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn planning(msg: impl Into<String>) -> Self {
        Error::Planning(msg.into())
    }
    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
