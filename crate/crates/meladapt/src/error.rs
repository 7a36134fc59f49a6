//! Crate-wide error type.
//!
//! One enum keeps the CLI's exit-code mapping in a single place: every
//! variant is classified as either a usage/input problem (bad files, bad
//! flags, invalid configs — exit code 2) or an internal/runtime failure
//! (diverged training, cancellation — exit code 1).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- configuration ----
    #[error("config parse error on line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config field `{field}` invalid: {message}")]
    ConfigInvalid { field: &'static str, message: String },

    #[error("unknown builtin config `{0}` (expected cfg1..cfg7)")]
    UnknownBuiltin(String),

    #[error("config sampling failed to find a valid non-excluded config after {0} attempts")]
    SamplingExhausted(usize),

    // ---- dsp ----
    #[error("waveform too short: {samples} samples (with padding) but one frame needs {needed}")]
    WaveformTooShort { samples: usize, needed: usize },

    #[error("mel filterbank row {row} has no positive entry; too few FFT bins between {fmin} Hz and {fmax} Hz")]
    EmptyFilter { row: usize, fmin: f64, fmax: f64 },

    #[error("invalid sample rate {0}")]
    BadSampleRate(u32),

    // ---- spectrogram bookkeeping ----
    #[error("value space mismatch: spectrogram tagged {found} but config implies {expected}")]
    ValueSpaceMismatch { expected: String, found: String },

    #[error("spectrogram claims normalized values but contains {value} at frame {frame}, mel {mel}")]
    NotNormalized { value: f64, frame: usize, mel: usize },

    #[error("mel band count mismatch: {left} vs {right}")]
    MelCountMismatch { left: usize, right: usize },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    // ---- stage-1 conversion ----
    #[error("filterbank is rank-deficient (rank {rank} < {n_mels} mel bands); pseudo-inverse is not usable")]
    DegenerateFilterbank { rank: usize, n_mels: usize },

    #[error("operation cancelled by progress hook")]
    Cancelled,

    // ---- network / training ----
    #[error("weights file does not match the model: {0}")]
    WeightsMismatch(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("training set problem: {0}")]
    TrainingSet(String),

    // ---- file formats ----
    #[error("{path}: {message}")]
    FileFormat { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Process exit code the CLI should use for this error: `2` for
    /// usage/input problems, `1` for internal/runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Cancelled | Error::Diverged { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::FileFormat { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
