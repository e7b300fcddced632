use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Validation failures (bad inputs, contract violations) are kept distinct from
/// runtime failures (I/O, divergence) so callers can map them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("sample rate mismatch: file has {found} Hz, expected {expected} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unstable filter section: pole radius {0:.6}")]
    UnstableFilter(f64),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("insufficient voiced frames: need {needed}, got {got}")]
    InsufficientVoicing { needed: usize, got: usize },
    #[error("degenerate pitch statistics: standard deviation is zero")]
    ZeroPitchStd,
    #[error("contour length mismatch: {0} vs {1} frames")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid trials: {0}")]
    Trials(String),
    #[error("duplicate speaker id: {0}")]
    DuplicateSpeaker(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid inputs or configuration rather than
    /// by the runtime environment.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Wav(_) | Error::Diverged { .. } | Error::Checkpoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
