use std::path::PathBuf;

use thiserror::Error;

use crate::features::FeatureId;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dialogue {id}: {message}")]
    InvalidDialogue { id: String, message: String },

    #[error("degenerate bucketing: {0}")]
    DegenerateBucketing(String),

    #[error("degenerate idf table: max_idf equals min_idf")]
    DegenerateIdf,

    #[error("sif fit failed: {0}")]
    Sif(String),

    #[error("empty training bucket {control}={bucket}")]
    EmptyBucket { control: String, bucket: u8 },

    #[error("unknown control `{0}`")]
    UnknownControl(String),

    #[error("control `{control}` has no bucket {bucket}")]
    UnknownBucket { control: String, bucket: u8 },

    #[error("beam exhausted at step {step}: every candidate was pruned by {features:?}")]
    BeamExhausted { step: usize, features: Vec<FeatureId> },

    #[error("archive checksum mismatch or truncated archive")]
    Checksum,

    #[error("unsupported archive version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidDialogue { .. } => "invalid_dialogue",
            Error::DegenerateBucketing(_) => "degenerate_bucketing",
            Error::DegenerateIdf => "degenerate_idf",
            Error::Sif(_) => "sif",
            Error::EmptyBucket { .. } => "empty_bucket",
            Error::UnknownControl(_) => "unknown_control",
            Error::UnknownBucket { .. } => "unknown_bucket",
            Error::BeamExhausted { .. } => "beam_exhausted",
            Error::Checksum => "checksum",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Archive(_) => "archive",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
