use crate::scores::Dimension;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Wraps an error with the 1-based input line it occurred on.
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("missing dimension `{0}`")]
    MissingDimension(Dimension),
    #[error("duplicate record (prompt_id={prompt_id:?}, video_id={video_id:?})")]
    DuplicateRecord { prompt_id: String, video_id: String },
    #[error("non-finite value for `{0}`")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("group mixes prompts {expected:?} and {found:?}")]
    MixedPrompts { expected: String, found: String },
    #[error("prompt {prompt_id:?} has {size} samples, {requested} required")]
    GroupTooSmall {
        prompt_id: String,
        size: usize,
        requested: usize,
    },
    #[error("score {0} falls in an empty histogram bin")]
    EmptyBin(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestep {t} out of range for schedule with T={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("sigmoid_ref loss requires reference parameters")]
    MissingReference,
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_line(self, line: usize) -> Self {
        Error::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// True for errors that indicate a bug rather than bad input.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Invariant(_) => true,
            Error::AtLine { source, .. } => source.is_internal(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
