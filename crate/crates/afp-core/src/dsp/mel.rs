//! Log-mel spectrogram front-end: 256 mel bins x 32 frames per 1 s segment.

use std::sync::OnceLock;

use super::stft::{Stft, StftConfig};
use super::AudioBuffer;
use crate::{Error, Result, SAMPLE_RATE_HZ};

pub const MEL_BINS: usize = 256;
pub const MEL_FRAMES: usize = 32;
/// Value every cell takes on silent input: ln(power floor).
pub const MEL_LOG_FLOOR: f64 = -18.420680743952367; // ln(1e-8)

const N_FFT: usize = 1024;
const HOP: usize = 250;
const POWER_FLOOR: f64 = 1e-8;
const F_MAX: f64 = 4000.0;

/// F x T matrix of log-compressed mel power, row-major by mel bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub freq_bins: usize,
    pub time_frames: usize,
    /// Center frequency of each mel bin in Hz.
    pub bin_to_hz: Vec<f64>,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.time_frames + frame]
    }

    /// Argmax mel bin of one time frame.
    pub fn column_argmax(&self, frame: usize) -> usize {
        (0..self.freq_bins)
            .max_by(|a, b| self.at(*a, frame).total_cmp(&self.at(*b, frame)))
            .unwrap()
    }
}

struct MelBank {
    stft: Stft,
    // sparse triangular filters: (first linear bin, weights)
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn bank() -> &'static MelBank {
    static BANK: OnceLock<MelBank> = OnceLock::new();
    BANK.get_or_init(|| {
        let stft = Stft::new(StftConfig {
            n_fft: N_FFT,
            hop: HOP,
            centered: true,
        });
        let max_mel = hz_to_mel(F_MAX);
        let points: Vec<f64> = (0..MEL_BINS + 2)
            .map(|i| mel_to_hz(max_mel * i as f64 / (MEL_BINS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE_HZ as f64 / N_FFT as f64;
        let n_bins = N_FFT / 2 + 1;
        let mut filters = Vec::with_capacity(MEL_BINS);
        let mut centers = Vec::with_capacity(MEL_BINS);
        for m in 0..MEL_BINS {
            let (lo, ctr, hi) = (points[m], points[m + 1], points[m + 2]);
            let norm = 2.0 / (hi - lo); // area normalization
            let first = (lo / bin_hz).ceil() as usize;
            let last = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
            let mut weights = Vec::new();
            for k in first..=last {
                let f = k as f64 * bin_hz;
                let tri = if f <= ctr {
                    (f - lo) / (ctr - lo)
                } else {
                    (hi - f) / (hi - ctr)
                };
                weights.push(tri.max(0.0) * norm);
            }
            filters.push((first, weights));
            centers.push(ctr);
        }
        MelBank {
            stft,
            filters,
            centers_hz: centers,
        }
    })
}

/// Log-mel spectrogram of one 1 s segment sampled at 8000 Hz.
///
/// STFT: 1024-point FFT, Hann window, hop 250, reflect center padding,
/// giving exactly 32 frames; 256 triangular mel filters over 0-4000 Hz,
/// area-normalized; compression ln(power + 1e-8).
pub fn mel_spectrogram(segment: &AudioBuffer) -> Result<Spectrogram> {
    if segment.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::SampleRateMismatch {
            left: segment.sample_rate_hz,
            right: SAMPLE_RATE_HZ,
        });
    }
    if segment.len() != SAMPLE_RATE_HZ as usize {
        return Err(Error::InvalidArgument(format!(
            "mel input must be exactly 1 s ({} samples), got {}",
            SAMPLE_RATE_HZ,
            segment.len()
        )));
    }
    let bank = bank();
    let power = bank.stft.power_frames(&segment.samples);
    debug_assert_eq!(power.len(), MEL_FRAMES);
    let mut values = vec![0.0; MEL_BINS * MEL_FRAMES];
    for (m, (first, weights)) in bank.filters.iter().enumerate() {
        for (t, frame) in power.iter().enumerate() {
            let mut acc = 0.0;
            for (j, w) in weights.iter().enumerate() {
                acc += w * frame[first + j];
            }
            values[m * MEL_FRAMES + t] = (acc + POWER_FLOOR).ln();
        }
    }
    Ok(Spectrogram {
        values,
        freq_bins: MEL_BINS,
        time_frames: MEL_FRAMES,
        bin_to_hz: bank.centers_hz.clone(),
    })
}
