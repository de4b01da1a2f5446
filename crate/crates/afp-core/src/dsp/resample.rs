//! Windowed-sinc sample-rate conversion (Kaiser β=8, 64 taps).

use super::AudioBuffer;
use crate::{Error, Result};

const HALF_TAPS: isize = 32;
const KAISER_BETA: f64 = 8.0;

/// Resample to `target_hz`, preserving duration within one output sample.
///
/// Resampling to the input rate returns a bitwise copy.
pub fn resample(audio: &AudioBuffer, target_hz: u32) -> Result<AudioBuffer> {
    if target_hz == 0 {
        return Err(Error::InvalidArgument("target rate must be > 0".into()));
    }
    let src = audio.sample_rate_hz;
    if src == target_hz {
        return Ok(audio.clone());
    }

    let n_in = audio.samples.len();
    let n_out = ((n_in as u64 * target_hz as u64 + src as u64 / 2) / src as u64) as usize;
    if n_in == 0 || n_out == 0 {
        return AudioBuffer::new(Vec::new(), target_hz);
    }

    // Anti-alias cutoff at 92% of the narrower Nyquist, in input-domain
    // cycles per sample.
    let ratio = target_hz as f64 / src as f64;
    let cutoff = 0.5 * ratio.min(1.0) * 0.92;

    // t advances by src/target input samples per output sample; phases of the
    // fractional part repeat with period target/gcd.
    let g = gcd(src, target_hz);
    let step_num = (src / g) as usize;
    let n_phases = (target_hz / g) as usize;

    let taps = 2 * HALF_TAPS as usize;
    let mut phase_taps = vec![0.0f64; n_phases * taps];
    for p in 0..n_phases {
        let frac = p as f64 * step_num as f64 / n_phases as f64;
        let frac = frac - frac.floor();
        let row = &mut phase_taps[p * taps..(p + 1) * taps];
        let mut sum = 0.0;
        for (k, w) in row.iter_mut().enumerate() {
            let x = (k as isize - HALF_TAPS + 1) as f64 - frac;
            *w = kernel(x, cutoff);
            sum += *w;
        }
        // unity DC gain per phase
        for w in row.iter_mut() {
            *w /= sum;
        }
    }

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let num = j * step_num;
        let base = num / n_phases;
        let phase = num % n_phases;
        let row = &phase_taps[phase * taps..(phase + 1) * taps];
        let mut acc = 0.0;
        for (k, w) in row.iter().enumerate() {
            let idx = base as isize + k as isize - HALF_TAPS + 1;
            if idx >= 0 && (idx as usize) < n_in {
                acc += audio.samples[idx as usize] * w;
            }
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_hz)
}

fn kernel(x: f64, cutoff: f64) -> f64 {
    let half = HALF_TAPS as f64;
    if x.abs() > half {
        return 0.0;
    }
    let window = bessel_i0(KAISER_BETA * (1.0 - (x / half) * (x / half)).max(0.0).sqrt())
        / bessel_i0(KAISER_BETA);
    2.0 * cutoff * sinc(2.0 * cutoff * x) * window
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        let pu = std::f64::consts::PI * u;
        pu.sin() / pu
    }
}

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= half / k as f64;
        let sq = term * term;
        sum += sq;
        if sq < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    #[test]
    fn halving_preserves_duration() {
        let audio = sine(440.0, 16000, 16000, 0.5);
        let out = resample(&audio, 8000).unwrap();
        assert_eq!(out.len(), 8000);
        assert_eq!(out.sample_rate_hz, 8000);
    }

    #[test]
    fn identity_is_bitwise_equal() {
        let audio = sine(440.0, 8000, 8000, 0.5);
        let out = resample(&audio, 8000).unwrap();
        assert_eq!(out.samples, audio.samples);
    }

    #[test]
    fn sine_amplitude_preserved_within_one_percent() {
        // analytic oracle: a 1 kHz sine keeps RMS amp/sqrt(2) at any rate
        let audio = sine(1000.0, 16000, 32000, 0.5);
        let out = resample(&audio, 8000).unwrap();
        let interior = &out.samples[200..out.len() - 200];
        let rms = (interior.iter().map(|s| s * s).sum::<f64>() / interior.len() as f64).sqrt();
        let expected = 0.5 / 2.0f64.sqrt();
        assert!(
            (rms - expected).abs() / expected < 0.01,
            "rms {rms} vs {expected}"
        );
    }

    #[test]
    fn band_above_target_nyquist_suppressed() {
        // 3.5 kHz tone is above the 8k->4k... above 4 kHz target Nyquist
        // when resampling 16 kHz to 8 kHz, 5 kHz must vanish (>= 40 dB).
        let audio = sine(5000.0, 16000, 32000, 0.5);
        let out = resample(&audio, 8000).unwrap();
        let interior = &out.samples[200..out.len() - 200];
        let rms = (interior.iter().map(|s| s * s).sum::<f64>() / interior.len() as f64).sqrt();
        let input_rms = 0.5 / 2.0f64.sqrt();
        let atten_db = 20.0 * (input_rms / rms.max(1e-30)).log10();
        assert!(atten_db >= 40.0, "stopband attenuation only {atten_db} dB");
    }

    #[test]
    fn upsampling_round_numbers() {
        let audio = sine(500.0, 8000, 8000, 0.3);
        let out = resample(&audio, 16000).unwrap();
        assert_eq!(out.len(), 16000);
    }

    #[test]
    fn zero_target_rate_rejected() {
        let audio = sine(500.0, 8000, 100, 0.3);
        assert!(resample(&audio, 0).is_err());
    }
}
