use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("point {id:?}: expected {expected} coordinates, found {found}")]
    Dimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("point {id:?}: coordinate {index} is not finite")]
    NonFinite { id: String, index: usize },

    #[error("duplicate point id {0:?}")]
    DuplicateId(String),

    #[error("dataset contains no points")]
    EmptyDataset,

    #[error("point {id:?} lies outside the grid extent")]
    OutsideExtent { id: String },

    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("current period {0} has no points")]
    EmptyCurrentPeriod(i64),

    #[error("track {0} has no point assignment")]
    Unassigned(usize),

    #[error("no point carries label dimension {0:?}")]
    UnknownLabel(String),

    #[error("no seat counts for period {0}")]
    MissingSeats(i64),

    #[error("malformed heatmap file: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
