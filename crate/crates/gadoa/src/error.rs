use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene sampling failed: {0}")]
    SceneSampling(String),
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("silent frame")]
    SilentFrame,
    #[error("feature shape mismatch: expected {expected}, got {got}")]
    FeatureShape { expected: usize, got: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training failed: {0}")]
    TrainingFailure(String),
    #[error("estimation failed: {0}")]
    EstimationFailure(String),
    #[error("model file error: {0}")]
    ModelFormat(String),
    #[error("data file error: {0}")]
    DataFormat(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for data/configuration problems,
    /// 3 for numeric failures. Usage errors (exit 1) are handled by the
    /// argument parser before an `Error` exists.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_)
            | Error::TrainingFailure(_)
            | Error::EstimationFailure(_)
            | Error::SilentFrame => 3,
            _ => 2,
        }
    }
}
