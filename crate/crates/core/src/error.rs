//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("empty feed: {0}")]
    EmptyFeed(String),

    #[error("no registrable label in {0:?}")]
    NoLabel(String),

    #[error("out-of-vocabulary symbol {symbol:?} in {input:?}")]
    OutOfVocab { input: String, symbol: char },

    #[error("label {label:?} is {len} tokens, above the {max}-token limit")]
    TooLong { label: String, len: usize, max: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("verdict coverage error: {0}")]
    Coverage(String),

    #[error("missing artifact {artifact}: run `{run_first}` first")]
    Dependency { artifact: String, run_first: String },

    #[error("dns error: {0}")]
    Dns(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
