use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two matrices that must agree on a dimension do not.
    #[error("dimension mismatch between {left} ({left_shape:?}) and {right} ({right_shape:?})")]
    Dimension {
        left: String,
        left_shape: (usize, usize),
        right: String,
        right_shape: (usize, usize),
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Row and column are 1-based, as a spreadsheet would show them.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(
        left: &str,
        left_shape: (usize, usize),
        right: &str,
        right_shape: (usize, usize),
    ) -> Self {
        Error::Dimension {
            left: left.to_owned(),
            left_shape,
            right: right.to_owned(),
            right_shape,
        }
    }
}
