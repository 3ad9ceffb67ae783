use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Bad scenario, flags or files; maps to exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] memmo::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;
