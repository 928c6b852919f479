use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("training diverged (seed {seed}, epoch {epoch}): {what}")]
    Diverged { seed: u64, epoch: usize, what: String },

    #[error("all {restarts} projection restarts produced non-finite losses")]
    ProjectionFailed { restarts: usize },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("stage `{stage}` is missing upstream artifact {}; {hint}", path.display())]
    MissingArtifact {
        stage: String,
        path: PathBuf,
        hint: String,
    },

    #[error("stage `{stage}` config hash mismatch (expected {expected}, found {found}); {hint}")]
    ConfigMismatch {
        stage: String,
        expected: String,
        found: String,
        hint: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite { .. } => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::ProjectionFailed { .. } => "projection_failed",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::ConfigMismatch { .. } => "config_mismatch",
        }
    }
}
