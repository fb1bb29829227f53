use std::io;

/// Errors produced by the matching front-end.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// A file did not follow its binary or text grammar.
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("inconsistent dimension: expected {expected}, found {found}")]
    InconsistentDimension { expected: usize, found: usize },

    #[error("empty collection")]
    EmptyCollection,

    #[error("need at least two images")]
    TooFewImages,

    #[error("zero-norm vector at row {0} under cosine metric")]
    ZeroNorm(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate descriptor at keypoint {0}")]
    DegenerateDescriptor(usize),

    #[error("keypoint {index} at ({x}, {y}) lies outside the {width}x{height} frame")]
    OutOfFrame {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("descriptor dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("no negatives available: batch size {0} < 2")]
    NoNegatives(usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("non-differentiable point at sample {0}: tie among hardest negatives")]
    NonDifferentiable(usize),

    #[error("duplicate source name {0:?}")]
    DuplicateSource(String),

    #[error("mismatched pair ids: ({0}, {1}) vs ({2}, {3})")]
    PairMismatch(String, String, String, String),

    #[error("name {0:?} cannot be represented in the text export")]
    UnrepresentableName(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
