//! Audio ingestion, resampling, segmentation, energy gating, and
//! spectro-temporal feature extraction.

mod mel;
mod resample;
mod stft;
mod wav;

pub use mel::{mel_spectrogram, Spectrogram, MEL_BINS, MEL_FRAMES, MEL_LOG_FLOOR};
pub use resample::resample;
pub use stft::{Stft, StftConfig};
pub use wav::{load_wav, save_wav};

use crate::{Error, Result, HOP_SECONDS, SAMPLE_RATE_HZ, SEGMENT_SECONDS};

/// Mono sample sequence in nominal range [-1, 1] plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "audio samples must be finite".into(),
            ));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let power: f64 = self.samples.iter().map(|s| s * s).sum();
        (power / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, s| acc.max(s.abs()))
    }

    /// Scale all samples in place by `gain`.
    pub fn scale(&mut self, gain: f64) {
        for s in &mut self.samples {
            *s *= gain;
        }
    }
}

/// Points into a song's segment grid; segment `i` starts at `i * 0.5` s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct SegmentRef {
    pub song_id: u32,
    pub segment_index: u32,
}

impl SegmentRef {
    pub fn new(song_id: u32, segment_index: u32) -> Self {
        SegmentRef {
            song_id,
            segment_index,
        }
    }

    /// Segment start time in seconds.
    pub fn start_s(&self) -> f64 {
        self.segment_index as f64 * HOP_SECONDS
    }
}

/// Number of whole analysis windows in `n` samples: floor((n - w)/h) + 1.
pub fn segment_count(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples < window {
        0
    } else {
        (n_samples - window) / hop + 1
    }
}

/// Cut a song into 1 s windows with 50% overlap.
///
/// Returns `(local segment index, window)` pairs; a 180 s song yields 359.
pub fn segment_song(audio: &AudioBuffer) -> Result<Vec<(u32, AudioBuffer)>> {
    segment_song_with(audio, SEGMENT_SECONDS, HOP_SECONDS)
}

pub fn segment_song_with(
    audio: &AudioBuffer,
    window_s: f64,
    hop_s: f64,
) -> Result<Vec<(u32, AudioBuffer)>> {
    if window_s <= 0.0 || hop_s <= 0.0 {
        return Err(Error::InvalidArgument(
            "window and hop must be positive".into(),
        ));
    }
    let window = (window_s * audio.sample_rate_hz as f64).round() as usize;
    let hop = (hop_s * audio.sample_rate_hz as f64).round() as usize;
    if audio.len() < window {
        return Err(Error::AudioTooShort {
            samples: audio.len(),
            rate: audio.sample_rate_hz,
        });
    }
    let count = segment_count(audio.len(), window, hop);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        let seg = AudioBuffer {
            samples: audio.samples[start..start + window].to_vec(),
            sample_rate_hz: audio.sample_rate_hz,
        };
        out.push((i as u32, seg));
    }
    Ok(out)
}

/// Segment energy in dB: `10 * log10(sum(x^2))`.
///
/// All-zero input returns `-inf`; callers drop segments at or below 0 dB
/// when building the database.
pub fn segment_energy_db(segment: &AudioBuffer) -> f64 {
    let power: f64 = segment.samples.iter().map(|s| s * s).sum();
    if power <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * power.log10()
    }
}

/// Database-construction energy gate.
pub fn passes_energy_gate(segment: &AudioBuffer) -> bool {
    segment_energy_db(segment) > 0.0
}

/// Scale to an exact target RMS. Errors on silent input.
pub fn normalize_rms(audio: &AudioBuffer, target_rms: f64) -> Result<AudioBuffer> {
    let rms = audio.rms();
    if rms <= 0.0 {
        return Err(Error::InvalidArgument(
            "cannot normalize silent audio".into(),
        ));
    }
    let mut out = audio.clone();
    out.scale(target_rms / rms);
    Ok(out)
}

/// Convenience: mel input expects 8000 Hz.
pub fn expect_pipeline_rate(audio: &AudioBuffer) -> Result<()> {
    if audio.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::SampleRateMismatch {
            left: audio.sample_rate_hz,
            right: SAMPLE_RATE_HZ,
        });
    }
    Ok(())
}
