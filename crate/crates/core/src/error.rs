use thiserror::Error;

/// Errors surfaced by every layer of the framework.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stale telemetry batch: batch ends at {batch_ts}s but graph is at {graph_ts}s")]
    StaleBatch { batch_ts: f64, graph_ts: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("non-finite loss at epoch {epoch} ({layer})")]
    Diverged { epoch: usize, layer: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
