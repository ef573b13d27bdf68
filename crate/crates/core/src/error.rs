use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("multichannel unsupported: {0} channels")]
    Multichannel(u16),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("frame period mismatch: {0}")]
    FramePeriodMismatch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("no frame overlap between audio and trajectory")]
    NoOverlap,
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 usage, 2 data, 3 provenance.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Provenance(_) => 3,
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            _ => 2,
        }
    }
}
