use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be read or written.
    #[error("ingest error at {path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record violates the schema or a domain invariant.
    #[error("validation error in {record}: field `{field}`: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },

    /// A record references a video that does not exist.
    #[error("referential error: unknown video id \"{video_id}\" ({context})")]
    Referential { video_id: String, context: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn validation(
        record: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Ingest {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or invalid input data, as
    /// opposed to runtime failures.
    pub fn is_config_or_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Referential { .. } | Error::Config(_) | Error::Input(_)
        )
    }
}
