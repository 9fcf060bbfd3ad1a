use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator and the analytic models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The finite-blocklength rate collapsed to zero, so nothing can be sent.
    #[error("zero achievable rate: the uplink cannot carry the update")]
    ZeroRate,

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("too few samples: {samples} samples cannot be split across {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },

    #[error("client shard is empty")]
    EmptyShard,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the error class, used for CLI exit reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Validation(_) => "ValidationError",
            Error::Domain(_) => "DomainError",
            Error::ZeroRate => "ZeroRate",
            Error::BadMagic { .. } => "BadMagic",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::EmptyShard => "EmptyShard",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) => 2,
            Error::Domain(_) => 3,
            Error::ZeroRate => 4,
            Error::BadMagic { .. }
            | Error::DimensionMismatch(_)
            | Error::TruncatedFile { .. }
            | Error::TooFewSamples { .. }
            | Error::EmptyShard => 5,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}
