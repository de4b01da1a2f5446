//! Deterministic synthesis of a desk-scale test corpus: pseudo-music songs,
//! three noise classes, and exponentially decaying impulse responses. Lets
//! the full pipeline run with zero external data; real WAV directories go
//! through the same pool interfaces.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioBuffer;
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Parameters for one synthetic song.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSongSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub voices: usize,
    pub tempo_bpm: f64,
}

impl Default for SynthSongSpec {
    fn default() -> Self {
        SynthSongSpec {
            seed: 0,
            duration_s: 30.0,
            voices: 3,
            tempo_bpm: 110.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    BabbleLike,
    Hum,
    Broadband,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::BabbleLike, NoiseKind::Hum, NoiseKind::Broadband];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::BabbleLike => "babble-like",
            NoiseKind::Hum => "hum",
            NoiseKind::Broadband => "broadband",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "babble-like" | "babble" => Ok(NoiseKind::BabbleLike),
            "hum" => Ok(NoiseKind::Hum),
            "broadband" => Ok(NoiseKind::Broadband),
            other => Err(Error::InvalidArgument(format!("unknown noise kind {other}"))),
        }
    }
}

// A-minor-ish pentatonic offsets in semitones.
const PENTATONIC: [i32; 5] = [0, 3, 5, 7, 10];
const NOISE_RMS: f64 = 0.1;

/// Deterministic pseudo-music: per-voice pentatonic note sequences with
/// harmonics and amplitude envelopes, summed and peak-normalized to 0.9.
pub fn synth_song(spec: &SynthSongSpec) -> Result<AudioBuffer> {
    if spec.duration_s < 5.0 {
        return Err(Error::InvalidArgument("song duration must be >= 5 s".into()));
    }
    if spec.voices == 0 {
        return Err(Error::InvalidArgument("song needs at least one voice".into()));
    }
    if !(spec.tempo_bpm > 0.0) {
        return Err(Error::InvalidArgument("tempo must be positive".into()));
    }
    let rate = SAMPLE_RATE_HZ as f64;
    let n = (spec.duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // every song shares one key: songs differ by note sequence, phase, and
    // timing, not by pitch range, which keeps the corpus confusable
    let root_hz: f64 = 220.0;
    // humanized tempo and a lead-in rest decorrelate same-key songs
    let beat_s = 60.0 / spec.tempo_bpm * rng.gen_range(0.92..1.08);
    let lead_in = (rng.gen_range(0.0..0.15) * rate) as usize;

    let mut mix = vec![0.0f64; n];
    for voice in 0..spec.voices {
        // bass register sits below 300 Hz, upper voices climb toward Nyquist
        let octave = voice.min(2) as i32 - 1;
        let mut pos = lead_in;
        while pos < n {
            let step = PENTATONIC[rng.gen_range(0..PENTATONIC.len())];
            let freq = root_hz * 2f64.powf((step + 12 * octave) as f64 / 12.0);
            let beats = [0.5, 1.0, 1.0, 2.0][rng.gen_range(0..4)];
            let note_len = ((beats * beat_s * rate) as usize).max(400).min(n - pos);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp: f64 = rng.gen_range(0.15..0.3);
            let vib_depth: f64 = rng.gen_range(0.005..0.02);
            let vib_hz: f64 = rng.gen_range(4.0..7.0);
            let vib_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let attack = (0.01 * rate) as usize;
            let transient = (0.03 * rate) as usize;
            let transient_amp = 0.5 * amp;
            let mut w = phase; // phase-continuous vibrato
            for i in 0..note_len {
                let t = i as f64 / rate;
                let env_attack = if i < attack {
                    i as f64 / attack as f64
                } else {
                    1.0
                };
                let env = env_attack * (-3.0 * t / (beats * beat_s)).exp();
                let f_now = freq
                    * (1.0 + vib_depth * (std::f64::consts::TAU * vib_hz * t + vib_phase).sin());
                w += std::f64::consts::TAU * f_now / rate;
                // six harmonics, 1/k damped, kept below Nyquist
                let mut tone = 0.0;
                for k in 1..=6 {
                    let hf = k as f64 * freq;
                    if hf < 3900.0 {
                        tone += (k as f64 * w).sin() / k as f64;
                    }
                }
                mix[pos + i] += amp * env * tone;
                // percussive onset: a short broadband splash
                if i < transient {
                    let decay = 1.0 - i as f64 / transient as f64;
                    mix[pos + i] += transient_amp * decay * rng.gen_range(-1.0..1.0);
                }
            }
            pos += note_len;
        }
    }

    let peak = mix.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        for s in &mut mix {
            *s *= g;
        }
    }
    AudioBuffer::new(mix, SAMPLE_RATE_HZ)
}

/// Deterministic noise of the requested class at RMS 0.1.
pub fn synth_noise(kind: NoiseKind, duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidArgument("noise duration must be positive".into()));
    }
    let rate = SAMPLE_RATE_HZ as f64;
    let n = (duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f6973); // domain-separated
    let mut out = vec![0.0f64; n];
    match kind {
        NoiseKind::Broadband => {
            for s in &mut out {
                *s = rng.gen_range(-1.0..1.0);
            }
        }
        NoiseKind::Hum => {
            // mains hum: 50 Hz fundamental with decaying odd-heavy harmonics
            let amps = [1.0, 0.6, 0.45, 0.3, 0.25, 0.15];
            let phases: Vec<f64> = (0..amps.len())
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            for (i, s) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let mut acc = 0.0;
                for (k, (a, p)) in amps.iter().zip(&phases).enumerate() {
                    acc += a * (std::f64::consts::TAU * 50.0 * (k + 1) as f64 * t + p).sin();
                }
                *s = acc;
            }
        }
        NoiseKind::BabbleLike => {
            // many slowly amplitude-modulated narrowband voices in the speech band
            let n_components = 24;
            for _ in 0..n_components {
                let f: f64 = rng.gen_range(250.0..2600.0);
                let mod_hz: f64 = rng.gen_range(2.0..8.0);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let mod_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                for (i, s) in out.iter_mut().enumerate() {
                    let t = i as f64 / rate;
                    let env = 0.5 + 0.5 * (std::f64::consts::TAU * mod_hz * t + mod_phase).sin();
                    *s += env * (std::f64::consts::TAU * f * t + phase).sin();
                }
            }
        }
    }
    let rms = (out.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let g = NOISE_RMS / rms;
        for s in &mut out {
            *s *= g;
        }
    }
    AudioBuffer::new(out, SAMPLE_RATE_HZ)
}

/// Exponentially decaying seeded noise tail behind a unit impulse; the
/// envelope hits -60 dB at `rt60_s`.
pub fn synth_ir(rt60_s: f64, seed: u64) -> Result<AudioBuffer> {
    if !(rt60_s > 0.05 && rt60_s < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rt60 must lie in (0.05, 1.0) s, got {rt60_s}"
        )));
    }
    let rate = SAMPLE_RATE_HZ as f64;
    let n = (1.2 * rt60_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x697221);
    let mut out = vec![0.0f64; n];
    out[0] = 1.0;
    for (i, s) in out.iter_mut().enumerate().skip(1) {
        let t = i as f64 / rate;
        // amplitude 10^(-3 t / rt60): exactly -60 dB at t = rt60.
        // tail level keeps the direct path dominant (desk-room ratio)
        let env = 10f64.powf(-3.0 * t / rt60_s);
        *s = 0.05 * env * rng.gen_range(-1.0f64..1.0);
    }
    AudioBuffer::new(out, SAMPLE_RATE_HZ)
}

/// Standard desk corpus: `count` songs seeded `seed_base..seed_base+count`.
pub fn synth_song_set(count: usize, seed_base: u64, duration_s: f64) -> Result<Vec<AudioBuffer>> {
    (0..count)
        .map(|i| {
            synth_song(&SynthSongSpec {
                seed: seed_base + i as u64,
                duration_s,
                ..SynthSongSpec::default()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn song_is_deterministic_and_sized() {
        let spec = SynthSongSpec {
            seed: 7,
            duration_s: 30.0,
            ..SynthSongSpec::default()
        };
        let a = synth_song(&spec).unwrap();
        let b = synth_song(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.len(), 240_000);
        assert!((a.peak() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn song_spec_validation() {
        assert!(synth_song(&SynthSongSpec {
            duration_s: 2.0,
            ..SynthSongSpec::default()
        })
        .is_err());
        assert!(synth_song(&SynthSongSpec {
            voices: 0,
            ..SynthSongSpec::default()
        })
        .is_err());
    }

    #[test]
    fn distinct_seeds_decorrelated() {
        // pairwise zero-lag normalized correlation on the first 1 s segment
        let songs: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let s = synth_song(&SynthSongSpec {
                    seed: 1000 + i,
                    duration_s: 5.0,
                    ..SynthSongSpec::default()
                })
                .unwrap();
                s.samples[..8000].to_vec()
            })
            .collect();
        let norm: Vec<f64> = songs
            .iter()
            .map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let mut max_corr = 0.0f64;
        for i in 0..songs.len() {
            for j in i + 1..songs.len() {
                let dot: f64 = songs[i].iter().zip(&songs[j]).map(|(a, b)| a * b).sum();
                max_corr = max_corr.max((dot / (norm[i] * norm[j])).abs());
            }
        }
        assert!(max_corr < 0.5, "max pairwise correlation {max_corr}");
    }

    #[test]
    fn broadband_spectrum_flat() {
        let noise = synth_noise(NoiseKind::Broadband, 30.0, 5).unwrap();
        assert!((noise.rms() - 0.1).abs() < 1e-12);
        let stft = crate::dsp::Stft::new(crate::dsp::StftConfig {
            n_fft: 1024,
            hop: 512,
            centered: false,
        });
        let frames = stft.power_frames(&noise.samples);
        let bins = 513;
        let mut avg = vec![0.0f64; bins];
        for f in &frames {
            for (a, v) in avg.iter_mut().zip(f) {
                *a += v;
            }
        }
        // average power in 100 Hz-wide bands over 100-3500 Hz
        let hz_per_bin = 8000.0 / 1024.0;
        let mut bands = Vec::new();
        let mut f0: f64 = 100.0;
        while f0 + 100.0 <= 3500.0 {
            let lo = (f0 / hz_per_bin).round() as usize;
            let hi = ((f0 + 100.0) / hz_per_bin).round() as usize;
            let p: f64 = avg[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            bands.push(10.0 * p.log10());
            f0 += 100.0;
        }
        let mean = bands.iter().sum::<f64>() / bands.len() as f64;
        for b in &bands {
            assert!((b - mean).abs() <= 3.0, "band {b} dB vs mean {mean} dB");
        }
    }

    #[test]
    fn hum_concentrates_at_harmonics() {
        let noise = synth_noise(NoiseKind::Hum, 10.0, 3).unwrap();
        let stft = crate::dsp::Stft::new(crate::dsp::StftConfig {
            n_fft: 8192,
            hop: 8192,
            centered: false,
        });
        let frames = stft.power_frames(&noise.samples);
        let hz_per_bin = 8000.0 / 8192.0;
        let mut harmonic = 0.0;
        let mut total = 0.0;
        for f in &frames {
            for (k, p) in f.iter().enumerate() {
                let freq = k as f64 * hz_per_bin;
                total += p;
                let nearest = (freq / 50.0).round() * 50.0;
                if nearest >= 50.0 && (freq - nearest).abs() < 3.0 {
                    harmonic += p;
                }
            }
        }
        assert!(harmonic / total > 0.9, "only {} of power at harmonics", harmonic / total);
    }

    #[test]
    fn babble_is_deterministic() {
        let a = synth_noise(NoiseKind::BabbleLike, 2.0, 9).unwrap();
        let b = synth_noise(NoiseKind::BabbleLike, 2.0, 9).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!((a.rms() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ir_envelope_hits_minus_60_db_at_rt60() {
        let rt60 = 0.3;
        let ir = synth_ir(rt60, 11).unwrap();
        assert_eq!(ir.samples[0], 1.0);
        // RMS envelope in 5 ms windows over the tail
        let win = 40;
        let tail = &ir.samples[1..];
        let first_rms: f64 =
            (tail[..win].iter().map(|s| s * s).sum::<f64>() / win as f64).sqrt();
        let mut crossing = None;
        let mut i = 0;
        while i + win <= tail.len() {
            let rms = (tail[i..i + win].iter().map(|s| s * s).sum::<f64>() / win as f64).sqrt();
            if 20.0 * (rms / first_rms).log10() <= -60.0 {
                crossing = Some((i + 1 + win / 2) as f64 / 8000.0);
                break;
            }
            i += win;
        }
        // windows starting near t=0 measure env(0) ~ 1; -60 dB then lands at rt60
        if let Some(t) = crossing {
            assert!((t - rt60).abs() / rt60 < 0.10, "crossing at {t}, want {rt60}");
        } else {
            // decay must reach -60 dB by the end of the 1.2*rt60 tail
            panic!("envelope never reached -60 dB");
        }
    }

    #[test]
    fn ir_range_validation() {
        assert!(synth_ir(0.01, 0).is_err());
        assert!(synth_ir(1.5, 0).is_err());
        let a = synth_ir(0.2, 4).unwrap();
        let b = synth_ir(0.2, 4).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
