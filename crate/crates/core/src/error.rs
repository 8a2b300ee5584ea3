use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("divergence at step {step}: iterate norm {norm:e}")]
    Divergence { step: usize, norm: f64 },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("config error at line {line} ({key}): {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BilevelError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BilevelError::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        BilevelError::NumericDomain(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        BilevelError::Unsupported(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, BilevelError>;
