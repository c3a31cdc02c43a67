use std::path::PathBuf;

/// Errors surfaced by every layer of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("inductiveness error: model is bound to {expected} entities, input has {actual}")]
    Inductiveness { expected: usize, actual: usize },

    #[error("corrupt dataset at {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(
        "training diverged at epoch {epoch}, batch {batch}: loss {loss}; parameter norms {norms}"
    )]
    NanLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        norms: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
