use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// The proximal subproblem is not strongly convex for this step.
    #[error("prox step t = {t} violates the convexity limit t < {limit}")]
    Convexity { t: f64, limit: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed frame at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    /// Not enough bytes buffered to hold a whole frame.
    #[error("incomplete frame: need {needed} more bytes")]
    Incomplete { needed: usize },

    #[error("cannot encode message: {0}")]
    Encode(String),

    #[error("round timed out waiting for client {client_id}")]
    Timeout { client_id: u32 },

    #[error("ingestion error at row {row}, column {column}: {msg}")]
    Ingest {
        row: usize,
        column: String,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
