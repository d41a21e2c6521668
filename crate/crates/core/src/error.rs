use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("cue unavailable: {0}")]
    CueUnavailable(String),

    #[error("training step skipped: {0}")]
    TrainingSkipped(String),

    #[error("non-finite gradient, step rejected ({count} entries)")]
    NonFiniteGradient { count: usize },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("pipeline stage '{stage}' aborted: {reason}")]
    StageFailed { stage: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
