use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("could not parse annotator response: {message}")]
    AnnotationParse { message: String, raw: String },

    #[error("no cached response for request {key} (replay mode)")]
    CacheMiss { key: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("model has not been trained")]
    NotTrained,

    #[error("invalid separator profile: {0}")]
    InvalidProfile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("annotator transport error: {0}")]
    Transport(String),

    #[error("line {line}: {source}")]
    Jsonl {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::AnnotationParse { .. } => "AnnotationParseError",
            Error::CacheMiss { .. } => "CacheMiss",
            Error::Integrity(_) => "IntegrityError",
            Error::Shape { .. } => "ShapeError",
            Error::DegenerateDataset(_) => "DegenerateDataset",
            Error::NotTrained => "NotTrained",
            Error::InvalidProfile(_) => "InvalidProfile",
            Error::Config(_) => "ConfigError",
            Error::Transport(_) => "TransportError",
            Error::Jsonl { .. } => "JsonlParseError",
            Error::Context { source, .. } => source.kind(),
            Error::Json(_) => "JsonError",
            Error::Io(_) => "IoError",
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn parse(message: impl Into<String>, raw: impl Into<String>) -> Error {
        Error::AnnotationParse {
            message: message.into(),
            raw: raw.into(),
        }
    }
}
