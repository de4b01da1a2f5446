//! Minimal RIFF/WAVE reader and writer for 16-bit PCM, 1-2 channels.

use std::fs;
use std::path::Path;

use super::AudioBuffer;
use crate::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

/// Load a PCM16 WAV file, downmixing stereo to mono by channel mean and
/// scaling amplitudes to [-1, 1].
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&display, e))?;
    parse_wav(&bytes, &display)
}

fn parse_wav(bytes: &[u8], path: &str) -> Result<AudioBuffer> {
    let bad = |reason: &str| Error::WavFormat {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                format = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let (tag, channels, rate, bits) = format.ok_or_else(|| bad("missing fmt chunk"))?;
    if tag != 1 {
        return Err(Error::UnsupportedCodec {
            path: path.to_string(),
            reason: format!("format tag {tag}, only PCM (1) supported"),
        });
    }
    if bits != 16 {
        return Err(Error::UnsupportedCodec {
            path: path.to_string(),
            reason: format!("{bits}-bit samples, only 16-bit supported"),
        });
    }
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedCodec {
            path: path.to_string(),
            reason: format!("{channels} channels, only mono/stereo supported"),
        });
    }
    if rate == 0 {
        return Err(bad("zero sample rate"));
    }
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    let frame_bytes = 2 * channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(bad("data chunk not a whole number of frames"));
    }

    let frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0;
        for c in 0..channels as usize {
            let off = f * frame_bytes + 2 * c;
            let v = i16::from_le_bytes(data[off..off + 2].try_into().unwrap());
            acc += v as f64 / PCM_SCALE;
        }
        samples.push(acc / channels as f64);
    }
    AudioBuffer::new(samples, rate)
}

/// Write mono PCM16 WAV. Samples are clamped to [-1, 1] before quantizing.
pub fn save_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &audio.samples {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(&display, e))
}
