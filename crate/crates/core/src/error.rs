use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV: {0}")]
    WavFormat(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("WAV contains no audio frames")]
    EmptyAudio,

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("clip of {len} samples is shorter than the {n_fft}-sample analysis window")]
    TooShort { len: usize, n_fft: usize },

    #[error("degenerate mel filterbank: filter {band} covers no FFT bins")]
    DegenerateFilterbank { band: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("duplicate track id `{0}`")]
    DuplicateTrack(String),

    #[error("row {row}: column `{column}` is not numeric: {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("cannot split: {0}")]
    UnsatisfiableSplit(String),

    #[error("feature `{0}` is constant over the fitting rows")]
    DegenerateFeature(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("checkpoint version mismatch: {0}")]
    Version(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
