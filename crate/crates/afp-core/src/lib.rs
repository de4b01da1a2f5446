//! Song-identification engine built around distortion-robust audio
//! fingerprints.
//!
//! The pipeline: [`dsp`] turns WAV audio into 1 s mel-spectrogram segments,
//! [`encoder`] maps segments to unit-norm embeddings trained with a
//! contrastive objective against the distortion model in [`augment`],
//! [`pqindex`] stores embeddings in a product-quantized inverted-file index,
//! and [`retrieval`] identifies songs by majority voting over per-segment
//! nearest neighbours. [`peakfp`] is the classical spectral-peak baseline.
//! [`eval`] runs the offline-SNR and simulated-recording protocols over a
//! corpus that [`corpus`] can synthesize from scratch.

pub mod augment;
pub(crate) mod seeding;
pub mod corpus;
pub mod dsp;
pub mod encoder;
pub mod eval;
pub mod peakfp;
pub mod pqindex;
pub mod retrieval;

use std::io;

use thiserror::Error;

/// Sampling rate every pipeline stage operates at, in Hz.
pub const SAMPLE_RATE_HZ: u32 = 8000;

/// Analysis window length in seconds.
pub const SEGMENT_SECONDS: f64 = 1.0;

/// Hop between consecutive segments in seconds (50% overlap).
pub const HOP_SECONDS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("wav parse error in {path}: {reason}")]
    WavFormat { path: String, reason: String },
    #[error("unsupported wav codec in {path}: {reason}")]
    UnsupportedCodec { path: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("audio shorter than one analysis window ({samples} samples at {rate} Hz)")]
    AudioTooShort { samples: usize, rate: u32 },
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },
    #[error("SNR undefined: {0}")]
    SnrUndefined(String),
    #[error("empty pool: {0}")]
    EmptyPool(String),
    #[error("k-means needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("index not trained")]
    IndexNotTrained,
    #[error("index is empty")]
    EmptyIndex,
    #[error("bad file format in {path}: {reason}")]
    BadFileFormat { path: String, reason: String },
    #[error("embedding rejected: {0}")]
    BadEmbedding(String),
    #[error("non-finite activation in encoder forward pass")]
    NonFiniteActivation,
    #[error("training failed: {0}")]
    Training(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
