use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("code layout: {0}")]
    Layout(String),
    #[error("{what} index {index} out of range 0..{len}")]
    OutOfRange { what: &'static str, index: usize, len: usize },
    #[error("unknown class directories: {}", .0.join(", "))]
    UnknownClass(Vec<String>),
    #[error("cannot decode image {}: {reason}", .path.display())]
    Decode { path: PathBuf, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {needed} identities, found {found}")]
    TooFewIdentities { needed: usize, found: usize },
    #[error("feature network not initialized")]
    FeatureNetUninitialized,
    #[error("non-finite value in {term}")]
    NonFinite { term: String },
    #[error("stage {stage} requires the stage {} checkpoint at {}", .stage - 1, .path.display())]
    MissingPrerequisite { stage: u8, path: PathBuf },
    #[error("checkpoint format version {found} is incompatible with {expected}")]
    Version { found: String, expected: String },
    #[error("model not ready: {0}")]
    Untrained(String),
    #[error("serialization: {0}")]
    Serde(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
