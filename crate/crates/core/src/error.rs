use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: tag {tag:?} is not O, B-* or I-*")]
    UnknownTag { line: usize, tag: String },

    #[error("tag {tag:?} at position {position} does not continue an entity; run bio_normalize first")]
    InvalidBio { position: usize, tag: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty sentence")]
    EmptySentence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {operand}: expected {expected:?}, got {got:?}")]
    DimMismatch {
        operand: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("target index {target} out of range for {size} classes")]
    TargetOutOfRange { target: usize, size: usize },

    #[error("model container: {0}")]
    Container(String),

    #[error("expected a {expected} model, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("embedder {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sentence {sentence}: gold has {gold} tokens but prediction has {pred}")]
    LengthMismatch {
        sentence: usize,
        gold: usize,
        pred: usize,
    },

    #[error("{expected} gold sentences but {got} predictions")]
    CountMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(operand: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::DimMismatch {
            operand: operand.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
