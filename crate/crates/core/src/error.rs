use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the analysis chain.
///
/// Each variant maps onto one of the CLI exit classes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error: missing channel `{channel}`")]
    MissingChannel { channel: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("data-quality error: non-finite sample in `{channel}` at index {index}")]
    NonFinite { channel: String, index: usize },

    #[error("range error: requested [{start}, {end}) s outside recording span [{span_start}, {span_end}) s")]
    Range {
        start: f64,
        end: f64,
        span_start: f64,
        span_end: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("reference-estimation error: {0}")]
    Reference(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("missing stage output `{}`: run `{prerequisite}` first", path.display())]
    MissingStage {
        path: PathBuf,
        prerequisite: &'static str,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::MissingStage { .. } | Error::Scenario(_) => 1,
            Error::InsufficientData(_) => 3,
            Error::MissingChannel { .. }
            | Error::Ingestion(_)
            | Error::Alignment(_)
            | Error::NonFinite { .. }
            | Error::Range { .. }
            | Error::Reference(_)
            | Error::Io { .. }
            | Error::Parse { .. } => 2,
        }
    }

    /// Tags the error with the pipeline stage it surfaced from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
