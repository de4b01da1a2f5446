//! Distortion model for training and evaluation: background-noise mixing at
//! a target SNR, impulse-response convolution, low/high-pass filters with an
//! octave roll-off, and the composed pipeline (baseline stages followed by a
//! probabilistic filter stage).

use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{load_wav, resample, AudioBuffer};
use crate::{Error, Result, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    LowPass,
    HighPass,
}

/// One octave-rolloff filter draw.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff_hz: f64,
    /// Attenuation slope in dB per octave; one of 12, 24, 36.
    pub rolloff_db: u32,
}

pub const LOW_PASS_CUTOFF_HZ: (f64, f64) = (2000.0, 3000.0);
pub const HIGH_PASS_CUTOFF_HZ: (f64, f64) = (500.0, 1000.0);
pub const ROLLOFFS_DB: [u32; 3] = [12, 24, 36];

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !ROLLOFFS_DB.contains(&self.rolloff_db) {
            return Err(Error::InvalidArgument(format!(
                "rolloff must be one of {ROLLOFFS_DB:?} dB/octave, got {}",
                self.rolloff_db
            )));
        }
        let range = match self.kind {
            FilterKind::LowPass => LOW_PASS_CUTOFF_HZ,
            FilterKind::HighPass => HIGH_PASS_CUTOFF_HZ,
        };
        if !(self.cutoff_hz > range.0 && self.cutoff_hz < range.1) {
            return Err(Error::InvalidArgument(format!(
                "{:?} cutoff must lie in ({}, {}) Hz, got {}",
                self.kind, range.0, range.1, self.cutoff_hz
            )));
        }
        Ok(())
    }

    /// Butterworth order realizing the slope: 12/24/36 dB per octave are
    /// orders 2/4/6.
    pub fn order(&self) -> u32 {
        self.rolloff_db / 6
    }
}

/// Parameters of the composed augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    /// Closed SNR interval in dB for noise mixing; `None` disables the stage.
    pub snr_db_range: Option<(f64, f64)>,
    pub ir_probability: f64,
    pub filter_probability: f64,
    pub time_offset_max_s: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            snr_db_range: Some((0.0, 10.0)),
            ir_probability: 0.5,
            filter_probability: 0.4,
            time_offset_max_s: 0.2,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("ir_probability", self.ir_probability),
            ("filter_probability", self.filter_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if let Some((lo, hi)) = self.snr_db_range {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "snr range empty: [{lo}, {hi}]"
                )));
            }
        }
        if self.time_offset_max_s < 0.0 {
            return Err(Error::InvalidArgument("time offset must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mix `noise` into `signal` at an exact SNR.
///
/// Shorter noise wraps; longer noise is cropped at a seeded random offset.
/// The gain is chosen so `10*log10(P_signal / P_scaled_noise) = snr_db`.
pub fn mix_at_snr(
    signal: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<AudioBuffer> {
    if noise.sample_rate_hz != signal.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            left: signal.sample_rate_hz,
            right: noise.sample_rate_hz,
        });
    }
    if noise.is_empty() {
        return Err(Error::SnrUndefined("noise is empty".into()));
    }
    let p_signal = power(&signal.samples);
    if p_signal <= 0.0 {
        return Err(Error::SnrUndefined("signal is all zero".into()));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(signal.clone());
    }

    let n = signal.len();
    let cropped = fit_noise(&noise.samples, n, rng);
    let p_noise = power(&cropped);
    if p_noise <= 0.0 {
        return Err(Error::SnrUndefined("noise is all zero".into()));
    }
    let gain = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = signal
        .samples
        .iter()
        .zip(&cropped)
        .map(|(s, v)| s + gain * v)
        .collect();
    AudioBuffer::new(samples, signal.sample_rate_hz)
}

fn power(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len().max(1) as f64
}

fn fit_noise(noise: &[f64], n: usize, rng: &mut impl Rng) -> Vec<f64> {
    if noise.len() == n {
        return noise.to_vec();
    }
    if noise.len() < n {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let take = (n - out.len()).min(noise.len());
            out.extend_from_slice(&noise[..take]);
        }
        return out;
    }
    let offset = rng.gen_range(0..=noise.len() - n);
    noise[offset..offset + n].to_vec()
}

/// Linear convolution with an impulse response, truncated to the signal
/// length and peak-normalized to the input's peak.
pub fn convolve_ir(signal: &AudioBuffer, ir: &AudioBuffer) -> Result<AudioBuffer> {
    if ir.sample_rate_hz != signal.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            left: signal.sample_rate_hz,
            right: ir.sample_rate_hz,
        });
    }
    if ir.is_empty() {
        return Err(Error::InvalidArgument("impulse response is empty".into()));
    }
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let mut out = fft_convolve(&signal.samples, &ir.samples);
    out.truncate(signal.len());
    let in_peak = signal.peak();
    let out_peak = out.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    if out_peak > 0.0 && in_peak > 0.0 {
        let g = in_peak / out_peak;
        for s in &mut out {
            *s *= g;
        }
    }
    AudioBuffer::new(out, signal.sample_rate_hz)
}

fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a
        .iter()
        .map(|x| Complex64::new(*x, 0.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(n)
        .collect();
    let mut fb: Vec<Complex64> = b
        .iter()
        .map(|x| Complex64::new(*x, 0.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(n)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Apply a Butterworth magnitude response of order `rolloff/6` zero-phase in
/// the frequency domain. The realized attenuation one octave past the cutoff
/// equals the roll-off factor within measurement tolerance, and the slope
/// continues at `rolloff` dB per octave.
pub fn apply_filter(signal: &AudioBuffer, spec: &FilterSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    butterworth_filter(signal, spec.kind, spec.cutoff_hz, spec.order())
}

/// Zero-phase Butterworth-magnitude filtering at an arbitrary cutoff/order.
pub fn butterworth_filter(
    signal: &AudioBuffer,
    kind: FilterKind,
    cutoff_hz: f64,
    order: u32,
) -> Result<AudioBuffer> {
    let nyquist = signal.sample_rate_hz as f64 / 2.0;
    if cutoff_hz >= nyquist {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff_hz} Hz must be below Nyquist {nyquist} Hz"
        )));
    }
    if order == 0 {
        return Err(Error::InvalidArgument("filter order must be >= 1".into()));
    }
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let n = signal.len().next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = signal
        .samples
        .iter()
        .map(|x| Complex64::new(*x, 0.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(n)
        .collect();
    fft.process(&mut buf);
    let rate = signal.sample_rate_hz as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64 * rate / n as f64
        } else {
            (n - k) as f64 * rate / n as f64
        };
        *c *= butterworth_gain(f, cutoff_hz, order, kind);
    }
    ifft.process(&mut buf);
    let out = buf[..signal.len()].iter().map(|c| c.re / n as f64).collect();
    AudioBuffer::new(out, signal.sample_rate_hz)
}

fn butterworth_gain(f: f64, cutoff: f64, order: u32, kind: FilterKind) -> f64 {
    let ratio = match kind {
        FilterKind::LowPass => f / cutoff,
        FilterKind::HighPass => {
            if f <= 0.0 {
                return 0.0;
            }
            cutoff / f
        }
    };
    1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
}

/// Draw a filter spec with the configured probability; `None` means the
/// filter stage is skipped this time.
///
/// Kind is uniform over low/high pass, the cutoff uniform within the kind's
/// range, the roll-off uniform over {12, 24, 36} dB.
pub fn sample_filter_spec(rng: &mut impl Rng, filter_probability: f64) -> Option<FilterSpec> {
    if !(rng.gen::<f64>() < filter_probability) {
        return None;
    }
    let kind = if rng.gen::<bool>() {
        FilterKind::LowPass
    } else {
        FilterKind::HighPass
    };
    let range = match kind {
        FilterKind::LowPass => LOW_PASS_CUTOFF_HZ,
        FilterKind::HighPass => HIGH_PASS_CUTOFF_HZ,
    };
    let cutoff_hz = rng.gen_range(range.0..range.1);
    let rolloff_db = ROLLOFFS_DB[rng.gen_range(0..ROLLOFFS_DB.len())];
    Some(FilterSpec {
        kind,
        cutoff_hz,
        rolloff_db,
    })
}

/// Baseline distortion: random temporal offset, then impulse-response
/// convolution with the configured probability, then noise at an SNR drawn
/// uniformly from the configured range. Output length equals input length.
pub fn baseline_pipeline(
    segment: &AudioBuffer,
    noise_pool: &[AudioBuffer],
    ir_pool: &[AudioBuffer],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<AudioBuffer> {
    cfg.validate()?;
    let mut out = segment.clone();

    if cfg.time_offset_max_s > 0.0 {
        let max = (cfg.time_offset_max_s * segment.sample_rate_hz as f64).round() as i64;
        let shift = rng.gen_range(-max..=max);
        out = time_shift(&out, shift);
    }

    if cfg.ir_probability > 0.0 {
        if ir_pool.is_empty() {
            return Err(Error::EmptyPool("impulse responses".into()));
        }
        let apply = rng.gen::<f64>() < cfg.ir_probability;
        let idx = rng.gen_range(0..ir_pool.len());
        if apply {
            out = convolve_ir(&out, &ir_pool[idx])?;
        }
    }

    if let Some((lo, hi)) = cfg.snr_db_range {
        if noise_pool.is_empty() {
            return Err(Error::EmptyPool("noise".into()));
        }
        let idx = rng.gen_range(0..noise_pool.len());
        let snr = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        out = mix_at_snr(&out, &noise_pool[idx], snr, rng)?;
    }
    Ok(out)
}

/// Full distortion: the baseline stages with a filter applied last, gated at
/// `filter_probability`.
pub fn proposed_pipeline(
    segment: &AudioBuffer,
    noise_pool: &[AudioBuffer],
    ir_pool: &[AudioBuffer],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<AudioBuffer> {
    let out = baseline_pipeline(segment, noise_pool, ir_pool, cfg, rng)?;
    match sample_filter_spec(rng, cfg.filter_probability) {
        Some(spec) => apply_filter(&out, &spec),
        None => Ok(out),
    }
}

/// Which pipeline a training run distorts positives with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Baseline,
    Proposed,
}

impl Pipeline {
    pub fn run(
        &self,
        segment: &AudioBuffer,
        noise_pool: &[AudioBuffer],
        ir_pool: &[AudioBuffer],
        cfg: &AugmentConfig,
        rng: &mut impl Rng,
    ) -> Result<AudioBuffer> {
        match self {
            Pipeline::Baseline => baseline_pipeline(segment, noise_pool, ir_pool, cfg, rng),
            Pipeline::Proposed => proposed_pipeline(segment, noise_pool, ir_pool, cfg, rng),
        }
    }
}

fn time_shift(audio: &AudioBuffer, shift: i64) -> AudioBuffer {
    if shift == 0 {
        return audio.clone();
    }
    let n = audio.len();
    let mut out = vec![0.0; n];
    if shift > 0 {
        let s = (shift as usize).min(n);
        out[s..].copy_from_slice(&audio.samples[..n - s]);
    } else {
        let s = ((-shift) as usize).min(n);
        out[..n - s].copy_from_slice(&audio.samples[s..]);
    }
    AudioBuffer {
        samples: out,
        sample_rate_hz: audio.sample_rate_hz,
    }
}

/// A directory (or in-memory set) of WAVs enumerated in sorted filename
/// order, optionally restricted to a manifest split.
#[derive(Debug, Clone)]
pub struct Pool {
    pub names: Vec<String>,
    pub buffers: Vec<AudioBuffer>,
}

/// Manifest pinning train/validation/test membership by filename.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct PoolManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSplit {
    All,
    Train,
    Val,
    Test,
}

impl Pool {
    pub fn from_buffers(buffers: Vec<AudioBuffer>) -> Self {
        let names = (0..buffers.len()).map(|i| format!("mem-{i:04}")).collect();
        Pool { names, buffers }
    }

    /// Load every WAV beneath `dir` in sorted filename order, resampled to
    /// the pipeline rate. With a `manifest.json` present, `split` selects
    /// the corresponding subset.
    pub fn load_dir(dir: impl AsRef<Path>, split: PoolSplit) -> Result<Pool> {
        let dir = dir.as_ref();
        let display = dir.display().to_string();
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(&display, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
            .collect();
        names.sort();

        if split != PoolSplit::All {
            let manifest_path = dir.join("manifest.json");
            let text = std::fs::read_to_string(&manifest_path)
                .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
            let manifest: PoolManifest = serde_json::from_str(&text)?;
            let wanted = match split {
                PoolSplit::Train => &manifest.train,
                PoolSplit::Val => &manifest.val,
                PoolSplit::Test => &manifest.test,
                PoolSplit::All => unreachable!(),
            };
            names.retain(|n| wanted.contains(n));
        }

        let mut buffers = Vec::with_capacity(names.len());
        for name in &names {
            let audio = load_wav(dir.join(name))?;
            buffers.push(resample(&audio, SAMPLE_RATE_HZ)?);
        }
        Ok(Pool { names, buffers })
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }
}

/// Split filenames 70-20-10 in sorted order, round-robin so every split is
/// non-empty once there are three or more files.
pub fn manifest_70_20_10(names: &[String]) -> PoolManifest {
    let mut manifest = PoolManifest::default();
    for (i, name) in names.iter().enumerate() {
        match i % 10 {
            0..=6 => manifest.train.push(name.clone()),
            7 | 8 => manifest.val.push(name.clone()),
            _ => manifest.test.push(name.clone()),
        }
    }
    manifest
}
