use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BelsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("linear system is singular even with ridge regularization")]
    SingularSystem,

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-numeric value in feature column `{column}`")]
    NonNumericFeature { column: String },

    #[error("stream produced no samples")]
    EmptyStream,

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BelsError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        BelsError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by user-supplied configuration or inputs
    /// rather than failures during a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            BelsError::InvalidConfig(_)
                | BelsError::FileNotFound(_)
                | BelsError::Parse { .. }
                | BelsError::NonNumericFeature { .. }
        )
    }
}

pub type Result<T, E = BelsError> = std::result::Result<T, E>;
