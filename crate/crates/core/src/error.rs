use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{what}:{line}: {msg}")]
    Parse {
        what: String,
        line: usize,
        msg: String,
    },

    #[error("corpus too short: {tokens} tokens cannot fill a window of order {order}")]
    CorpusTooShort { tokens: usize, order: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("not a pinyin syllable: {0:?}")]
    NotASyllable(String),

    #[error("unknown symbol {symbol:?} in {table}")]
    UnknownSymbol { symbol: String, table: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("instance too large for exhaustive search: {0} candidate sequences")]
    TooLarge(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stage {stage} failed: {msg}")]
    Stage { stage: String, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            msg: msg.into(),
        }
    }
}
