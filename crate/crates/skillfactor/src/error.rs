//! Crate-wide error type.
//!
//! Variants map onto the CLI exit codes: configuration problems, missing
//! stage prerequisites, backend transport failures, and artifact integrity
//! violations each get a distinct code so automation can tell them apart.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` requires `{missing}`; run the `{producer}` stage first")]
    Prerequisite {
        stage: String,
        missing: String,
        producer: String,
    },

    /// Transport-level backend failure. Retriable: nothing was committed.
    #[error("backend error ({context}): {message}")]
    Backend { context: String, message: String },

    /// Embedding provider failure, naming the batch that failed so a rerun
    /// can resume.
    #[error("embedding provider failed on batch {batch}: {message}")]
    Provider { batch: usize, message: String },

    #[error("artifact integrity violation: {0}")]
    Integrity(String),

    #[error("insufficient material to build class {class} controls: {detail}")]
    InsufficientControls { class: String, detail: String },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI. Zero is success and never produced here.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Prerequisite { .. } => 3,
            Error::Backend { .. } | Error::Provider { .. } => 4,
            Error::Integrity(_) | Error::InsufficientControls { .. } => 5,
            Error::Io { .. } | Error::Other(_) => 1,
        }
    }
}
