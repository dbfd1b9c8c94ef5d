use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("missing fold file {0}")]
    MissingFold(PathBuf),

    #[error("duplicate video_id {0}")]
    DuplicateVideo(String),

    #[error("unknown trope {0:?}")]
    UnknownTrope(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },

    #[error("missing feature: {video_id}/{modality}")]
    MissingFeature { video_id: String, modality: String },

    #[error("missing stream {0}")]
    MissingStream(String),

    #[error("stream {0} is not configured")]
    ExtraStream(String),

    #[error("empty sequence for stream {0}")]
    EmptySequence(String),

    #[error("contextual backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("zero-norm context embedding")]
    ZeroNormContext,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite loss on example {video_id}")]
    NonFiniteLoss { video_id: String },

    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stable short tag used by the CLI's one-line error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::MissingFold(_) => "io",
            Error::Format { .. } | Error::NonFinite { .. } => "format",
            Error::EmptyCorpus
            | Error::DuplicateVideo(_)
            | Error::UnknownTrope(_)
            | Error::Invalid(_) => "data",
            Error::Dimension(_)
            | Error::MissingStream(_)
            | Error::ExtraStream(_)
            | Error::EmptySequence(_) => "shape",
            Error::MissingFeature { .. } => "missing-feature",
            Error::BackendUnavailable(_) | Error::ZeroNormContext => "backend",
            Error::Config(_) => "config",
            Error::NonFiniteLoss { .. } | Error::TrainingAborted(_) => "training",
        }
    }
}
