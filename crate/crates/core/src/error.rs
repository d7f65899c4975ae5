//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The three domain categories mirror how operations fail: `Config` for
/// invalid parameters or infeasible setups (the message names the violated
/// field or capacity), `Protocol` for malformed or out-of-order messages and
/// call contracts, `Domain` for arguments outside an operation's domain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
