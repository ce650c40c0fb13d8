use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing or renamed column `{0}`")]
    MissingColumn(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("estimator `{estimator}` failed: {message}")]
    Estimator { estimator: String, message: String },
    #[error("bootstrap error: {0}")]
    Bootstrap(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
