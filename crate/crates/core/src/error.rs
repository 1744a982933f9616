use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch between {a} and {b}: {detail}")]
    ShapeMismatch { a: String, b: String, detail: String },
    #[error("numeric error at {context}: {detail}")]
    Numeric { context: String, detail: String },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("missing prerequisite: run `{subcommand}` first ({detail})")]
    MissingPrerequisite { subcommand: String, detail: String },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
