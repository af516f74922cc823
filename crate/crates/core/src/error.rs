use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },

    #[error("overlapping VC configuration for `{vc}` at {at}")]
    OverlappingVcConfig { vc: String, at: i64 },

    #[error("invalid cluster spec: {0}")]
    InvalidCluster(String),

    #[error("invalid synthesis parameters: {0}")]
    InvalidSynthParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("feature width mismatch: model expects {expected}, got {found}")]
    FeatureWidth { expected: usize, found: usize },

    #[error("forecaster trained on data up to {trained_until}, which is not before the evaluation start {eval_start}")]
    Leakage { trained_until: i64, eval_start: i64 },

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
