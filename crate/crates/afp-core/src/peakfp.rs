//! Spectral-peak landmark fingerprinter: local-maxima extraction, triplet
//! hashing into packed 32-bit values, inverted-list storage, and
//! offset-histogram matching.

use std::collections::HashMap;
use std::path::Path;

use crate::dsp::{AudioBuffer, Stft, StftConfig};
use crate::{Error, Result};

/// STFT used for peaks: linear-frequency bins, independent of the mel
/// front-end.
pub const PEAK_N_FFT: usize = 1024;
pub const PEAK_HOP: usize = 256;
const DB_FLOOR: f64 = 1e-10;

const HASH_MAGIC: &[u8; 4] = b"AFPH";
const HASH_VERSION: u16 = 1;

/// A local maximum of the magnitude spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Peak {
    pub frame: u32,
    pub freq_bin: u32,
}

/// Packed (k0, k1, dn) landmark: k0 in bits 22.., k1 in bits 12..22, dn in
/// bits 0..12.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandmarkHash {
    pub value: u32,
    pub anchor_frame: u32,
}

pub fn pack_hash(k0: u32, k1: u32, dn: u32) -> u32 {
    debug_assert!(k0 < 1024 && k1 < 1024 && dn > 0 && dn < 4096);
    (k0 << 22) | (k1 << 12) | dn
}

pub fn unpack_hash(value: u32) -> (u32, u32, u32) {
    (value >> 22, (value >> 12) & 0x3ff, value & 0xfff)
}

/// Peak extraction parameters; `neighborhood` holds half-widths, matching
/// the usual constellation-matcher footprint of roughly +/-20 bins/frames.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PeakConfig {
    pub neighborhood: (usize, usize),
    pub min_db_above_median: f64,
    pub fan_out: usize,
    /// (min dn, max dn, max |dk|) target zone for pairing.
    pub zone: (u32, u32, u32),
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            neighborhood: (20, 20),
            min_db_above_median: 10.0,
            fan_out: 5,
            zone: (1, 200, 128),
        }
    }
}

/// Magnitude spectrogram in dB for peak work, frames outermost.
pub fn stft_db_frames(audio: &AudioBuffer) -> Vec<Vec<f64>> {
    let stft = Stft::new(StftConfig {
        n_fft: PEAK_N_FFT,
        hop: PEAK_HOP,
        centered: false,
    });
    let mut frames = stft.magnitude_frames(&audio.samples);
    for frame in &mut frames {
        for v in frame.iter_mut() {
            *v = 20.0 * (*v + DB_FLOOR).log10();
        }
    }
    frames
}

/// Cells strictly greater than every cell in their (dk, dn) neighborhood
/// and at least `min_db_above_median` above their frame's median, sorted by
/// (frame, bin).
pub fn extract_peaks(
    spec_db: &[Vec<f64>],
    neighborhood: (usize, usize),
    min_db_above_median: f64,
) -> Vec<Peak> {
    let n_frames = spec_db.len();
    if n_frames == 0 {
        return Vec::new();
    }
    let n_bins = spec_db[0].len();
    let (dk, dn) = neighborhood;

    let medians: Vec<f64> = spec_db
        .iter()
        .map(|frame| {
            let mut sorted = frame.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            sorted[sorted.len() / 2]
        })
        .collect();

    let mut peaks = Vec::new();
    for n in 0..n_frames {
        let threshold = medians[n] + min_db_above_median;
        for k in 0..n_bins {
            let val = spec_db[n][k];
            if val <= threshold {
                continue;
            }
            let mut is_peak = true;
            'scan: for nn in n.saturating_sub(dn)..=(n + dn).min(n_frames - 1) {
                let frame = &spec_db[nn];
                for kk in k.saturating_sub(dk)..=(k + dk).min(n_bins - 1) {
                    if (nn, kk) != (n, k) && frame[kk] >= val {
                        is_peak = false;
                        break 'scan;
                    }
                }
            }
            if is_peak {
                peaks.push(Peak {
                    frame: n as u32,
                    freq_bin: k as u32,
                });
            }
        }
    }
    peaks
}

/// Pair each anchor with up to `fan_out` subsequent peaks inside the target
/// zone and pack the triplets.
pub fn hash_landmarks(peaks: &[Peak], fan_out: usize, zone: (u32, u32, u32)) -> Vec<LandmarkHash> {
    let (min_dn, max_dn, max_dk) = zone;
    let mut out = Vec::new();
    for (i, anchor) in peaks.iter().enumerate() {
        let mut taken = 0;
        for target in &peaks[i + 1..] {
            if taken >= fan_out {
                break;
            }
            let dn = target.frame - anchor.frame;
            if dn > max_dn {
                break; // peaks sorted by frame: no later target can qualify
            }
            if dn < min_dn {
                continue;
            }
            let dk = (target.freq_bin as i64 - anchor.freq_bin as i64).unsigned_abs() as u32;
            if dk > max_dk {
                continue;
            }
            out.push(LandmarkHash {
                value: pack_hash(anchor.freq_bin, target.freq_bin, dn),
                anchor_frame: anchor.frame,
            });
            taken += 1;
        }
    }
    out
}

/// Convenience: audio straight to landmark hashes.
pub fn fingerprint(audio: &AudioBuffer, cfg: &PeakConfig) -> Vec<LandmarkHash> {
    let spec = stft_db_frames(audio);
    let peaks = extract_peaks(&spec, cfg.neighborhood, cfg.min_db_above_median);
    hash_landmarks(&peaks, cfg.fan_out, cfg.zone)
}

/// Inverted lists mapping hash value to (song, anchor frame) postings.
#[derive(Debug, Clone, Default)]
pub struct PeakIndex {
    entries: HashMap<u32, Vec<(u32, u32)>>,
    entry_count: u64,
}

/// One ranked match: vote count is the best offset-histogram bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SongMatch {
    pub song_id: u32,
    pub vote_count: u32,
    pub best_offset: i64,
}

impl PeakIndex {
    pub fn new() -> Self {
        PeakIndex::default()
    }

    pub fn add_song(&mut self, song_id: u32, hashes: &[LandmarkHash]) {
        for h in hashes {
            self.entries
                .entry(h.value)
                .or_default()
                .push((song_id, h.anchor_frame));
        }
        self.entry_count += hashes.len() as u64;
    }

    /// Sort every posting list by (song, anchor) for deterministic iteration.
    pub fn freeze(&mut self) {
        for list in self.entries.values_mut() {
            list.sort_unstable();
        }
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count
    }

    /// Offset-histogram matching: every colliding hash votes for
    /// (song, stored_anchor - query_anchor); a song's score is its largest
    /// histogram bin. Ties rank by lower song id, then smaller offset.
    pub fn match_query(&self, query_hashes: &[LandmarkHash]) -> Vec<SongMatch> {
        let mut histograms: HashMap<(u32, i64), u32> = HashMap::new();
        for h in query_hashes {
            if let Some(list) = self.entries.get(&h.value) {
                for (song_id, anchor) in list {
                    let offset = *anchor as i64 - h.anchor_frame as i64;
                    *histograms.entry((*song_id, offset)).or_insert(0) += 1;
                }
            }
        }
        let mut best: HashMap<u32, (u32, i64)> = HashMap::new();
        for ((song_id, offset), count) in histograms {
            let entry = best.entry(song_id).or_insert((0, i64::MAX));
            if count > entry.0 || (count == entry.0 && offset < entry.1) {
                *entry = (count, offset);
            }
        }
        let mut out: Vec<SongMatch> = best
            .into_iter()
            .map(|(song_id, (vote_count, best_offset))| SongMatch {
                song_id,
                vote_count,
                best_offset,
            })
            .collect();
        out.sort_by(|a, b| {
            b.vote_count
                .cmp(&a.vote_count)
                .then(a.song_id.cmp(&b.song_id))
        });
        out
    }

    /// Persist as sorted (hash, song, anchor) triples, little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut triples: Vec<(u32, u32, u32)> = Vec::with_capacity(self.entry_count as usize);
        for (hash, list) in &self.entries {
            for (song, anchor) in list {
                triples.push((*hash, *song, *anchor));
            }
        }
        triples.sort_unstable();
        let mut bytes = Vec::with_capacity(14 + triples.len() * 12);
        bytes.extend_from_slice(HASH_MAGIC);
        bytes.extend_from_slice(&HASH_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(triples.len() as u64).to_le_bytes());
        for (hash, song, anchor) in &triples {
            bytes.extend_from_slice(&hash.to_le_bytes());
            bytes.extend_from_slice(&song.to_le_bytes());
            bytes.extend_from_slice(&anchor.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PeakIndex> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
        let bad = |reason: &str| Error::BadFileFormat {
            path: display.clone(),
            reason: reason.to_string(),
        };
        if bytes.len() < 14 || &bytes[0..4] != HASH_MAGIC {
            return Err(bad("missing AFPH magic"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != HASH_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        if bytes.len() != 14 + count * 12 {
            return Err(bad("truncated entry table"));
        }
        let mut index = PeakIndex::new();
        for i in 0..count {
            let off = 14 + i * 12;
            let hash = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let song = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            let anchor = u32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap());
            index.entries.entry(hash).or_default().push((song, anchor));
        }
        index.entry_count = count as u64;
        index.freeze();
        Ok(index)
    }
}
