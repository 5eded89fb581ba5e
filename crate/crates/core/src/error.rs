use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("word table is empty")]
    EmptyTable,

    #[error("target vocabulary size {requested} is below the minimum {minimum} (characters plus special symbols)")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("word {word:?} contains characters missing from the vocabulary: {chars:?}")]
    UnknownCharacters { word: String, chars: Vec<char> },

    #[error("word {word:?} has no valid segmentation")]
    NoSegmentation { word: String },

    #[error("word of {len} characters exceeds the limit of {limit}")]
    WordTooLong { len: usize, limit: usize },

    #[error("oracle limit: {0}")]
    OracleLimit(String),

    #[error("token {0:?} already contains the continuation marker `@@`")]
    MarkerInInput(String),

    #[error("non-finite loss {loss} on word {word:?}")]
    NonFiniteLoss { word: String, loss: f64 },

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary is {actual}")]
    VocabMismatch { expected: String, actual: String },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by a model/vocabulary pairing rather than by input data.
    pub fn is_model_mismatch(&self) -> bool {
        matches!(self, Error::VocabMismatch { .. } | Error::Checkpoint(_))
    }
}
