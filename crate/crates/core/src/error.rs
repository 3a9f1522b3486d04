use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor dimension disagrees with what an operation requires.
    #[error("{op}: dimension mismatch on axis `{axis}` (expected {expected}, found {found})")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: expected a rank-{expected} tensor, found rank {found}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: {message}")]
    Precondition { op: &'static str, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("no images found in {0}")]
    EmptyDataset(PathBuf),

    #[error("training diverged at step {step} (channel {channel}): {which} is not finite")]
    Divergence {
        step: u64,
        channel: char,
        which: &'static str,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint is truncated: {0}")]
    Truncated(String),

    #[error("checkpoint is malformed: {0}")]
    Malformed(String),

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn precondition(op: &'static str, message: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
