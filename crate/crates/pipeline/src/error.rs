use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: corrupt entry at byte offset {offset}: {message}")]
    Corrupt { path: PathBuf, offset: u64, message: String },

    #[error("{path}:{line}: {message}")]
    Source { path: PathBuf, line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    /// Credentials rejected; retrying cannot help.
    #[error("endpoint rejected credentials ({status}): {body}")]
    Auth { status: u16, body: String },

    /// The endpoint answered with something that is not a valid reply.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },

    #[error("mock: {0}")]
    Mock(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },

    #[error(transparent)]
    Core(#[from] quorum_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that end the whole run rather than one request.
    pub fn is_fatal(&self) -> bool {
        matches!(self, PipelineError::Auth { .. } | PipelineError::Protocol(_))
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        PipelineError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
