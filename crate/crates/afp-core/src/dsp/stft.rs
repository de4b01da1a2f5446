//! Short-time Fourier transform shared by the mel front-end and the
//! spectral-peak fingerprinter.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    /// Reflect-pad by n_fft/2 on both sides so frame t is centered at t*hop.
    pub centered: bool,
}

pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Self {
        assert!(cfg.n_fft > 0 && cfg.hop > 0);
        let window = hann(cfg.n_fft);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Stft { cfg, window, fft }
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    pub fn bins(&self) -> usize {
        self.cfg.n_fft / 2 + 1
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        if self.cfg.centered {
            n_samples / self.cfg.hop
        } else if n_samples < self.cfg.n_fft {
            0
        } else {
            (n_samples - self.cfg.n_fft) / self.cfg.hop + 1
        }
    }

    /// Per-frame power spectra (|X|^2), frames outermost.
    pub fn power_frames(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        self.frames(samples, |c| c.norm_sqr())
    }

    /// Per-frame magnitude spectra, frames outermost.
    pub fn magnitude_frames(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        self.frames(samples, |c| c.norm())
    }

    fn frames(&self, samples: &[f64], f: impl Fn(Complex64) -> f64) -> Vec<Vec<f64>> {
        let n_fft = self.cfg.n_fft;
        let padded: Vec<f64> = if self.cfg.centered {
            reflect_pad(samples, n_fft / 2)
        } else {
            samples.to_vec()
        };
        let count = self.frame_count(samples.len());
        let bins = self.bins();
        let mut out = Vec::with_capacity(count);
        let mut buf = vec![Complex64::default(); n_fft];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for t in 0..count {
            let start = t * self.cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = padded.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.push(buf[..bins].iter().map(|c| f(*c)).collect());
        }
        out
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i.min(n - 1)]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        let idx = n.saturating_sub(2 + i).min(n - 1);
        out.push(x[idx]);
    }
    out
}
