// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by corpus handling, the runtime, and the analyses.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// Underlying filesystem failure.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file did not parse against its expected schema.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// Parsed data violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A prompt template could not locate its answer marker.
    #[error("answer marker {0:?} not found in rendered prompt")]
    MarkerNotFound(String),

    /// Model configuration or weights are unusable.
    #[error("model error: {0}")]
    Model(String),

    /// An intervention or capture request is out of range or malformed.
    #[error("intervention error: {0}")]
    Intervention(String),

    /// An activation store does not match the requested run.
    #[error("store error: {0}")]
    Store(String),

    /// Input to a statistical routine or probe is degenerate.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A requested design or sampling scheme cannot be satisfied.
    #[error("infeasible request: {0}")]
    Infeasible(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Self::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
