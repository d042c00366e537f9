use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants group into the three failure classes the CLI reports through its
/// exit code: validation (bad configuration or API usage), data (inputs that
/// cannot be ingested or are too short), and training (numeric failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("schema error: missing column {column}")]
    Schema { column: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("join error: keys missing from every source: {}", keys.join(", "))]
    Join { keys: Vec<String> },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 1 validation, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Usage(_) | Error::Schema { .. } => 1,
            Error::Data(_)
            | Error::Input(_)
            | Error::Join { .. }
            | Error::Alignment(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Training(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
