use std::path::PathBuf;

use thiserror::Error;

use crate::trace::Quantity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("series not aligned: {0}")]
    Alignment(String),

    #[error("cannot extrapolate to t = {t} s outside [{first}, {last}]")]
    Extrapolation { t: f64, first: f64, last: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("no threshold for {metric} on {quantity}")]
    MissingThreshold { metric: String, quantity: Quantity },

    #[error("optimizer initialization failed: {0}")]
    Initialization(String),

    #[error("cost evaluation failed: {0}")]
    CostEvaluation(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("foreign key violation: {0}")]
    ForeignKey(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bus is closed")]
    Closed,

    #[error("subscriber queue for topic `{topic}` is full")]
    QueueFull { topic: String },

    #[error("store at {0} is locked by another writer")]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
