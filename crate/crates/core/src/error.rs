use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum SageError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("ddim step is singular: alpha_{t} = 0")]
    Singular { t: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("world generation failed: {0}")]
    Generation(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SageError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SageError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        SageError::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SageError::Singular { .. } | SageError::NonFinite(_) | SageError::NotPsd { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SageError>;
