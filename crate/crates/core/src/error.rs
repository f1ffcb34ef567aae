use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("idf source is empty: at least one document is required")]
    EmptyIdfSource,

    #[error("duplicate caption id `{0}`")]
    DuplicateCaption(String),

    #[error("line {line}: caption `{caption_id}` has no tokens")]
    EmptyCaption { line: usize, caption_id: String },

    #[error("duplicate feature vector for image `{0}`")]
    DuplicateImage(String),

    #[error("line {line}: expected {expected} feature components, found {found}")]
    RaggedFeatures {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-finite feature component")]
    NonFiniteFeature { line: usize },

    #[error("vector dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("sentence `{0}` has an empty hypothesis list")]
    EmptyKBest(String),

    #[error("k-best list for sentence `{sent_id}` is not in decoder order at hypothesis {index}")]
    KBestOrder { sent_id: String, index: usize },

    #[error("sentence `{0}` is not contiguous in the k-best file")]
    KBestNotContiguous(String),

    #[error("unknown caption id `{0}`")]
    UnknownCaption(String),

    #[error("no sentence pairs to evaluate")]
    EmptyEvaluation,

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k-best depth {depth} is below the required {required}")]
    InsufficientDepth { depth: usize, required: usize },

    #[error("{stage} failed for sentence `{sent_id}`: {source}")]
    Stage {
        stage: &'static str,
        sent_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("index file: {0}")]
    IndexFormat(String),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str, sent_id: &str) -> Self {
        Error::Stage {
            stage,
            sent_id: sent_id.to_owned(),
            source: Box::new(self),
        }
    }

    pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Error::Malformed {
            line,
            reason: reason.into(),
        }
    }
}
