use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input shape error: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("vocabulary error: prompt id {id} outside vocabulary of {len}")]
    Vocab { id: usize, len: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("coverage error: class {0:?} absent from the dataset")]
    Coverage(String),

    #[error("training failure in {stage} at step {step}: {reason}")]
    Training {
        stage: String,
        step: usize,
        reason: String,
    },

    #[error("merge error: {0}")]
    Merge(String),

    #[error("undefined baseline: original accuracy is zero")]
    UndefinedBaseline,

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn training(stage: impl Into<String>, step: usize, reason: impl Into<String>) -> Self {
        Error::Training {
            stage: stage.into(),
            step,
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Vocab { .. } | Error::Coverage(_) | Error::Shape { .. } => 2,
            Error::Degenerate(_) | Error::UndefinedBaseline => 2,
            Error::Training { .. } => 3,
            Error::Merge(_) | Error::Artifact(_) | Error::Io(_) | Error::Json(_) => 4,
        }
    }
}
