//! Evaluation harness: builds test material and runs the offline-SNR
//! protocol (Top-1 hit rate) and the simulated-recording protocol (song
//! accuracy with majority voting), plus the quantization trade-off sweep.
//! Reports are machine readable (CSV and JSON) and reproducible bit for bit
//! under a fixed seed.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::Digest;

use crate::augment::{butterworth_filter, convolve_ir, mix_at_snr, FilterKind};
use crate::dsp::{
    normalize_rms, passes_energy_gate, segment_song, AudioBuffer, SegmentRef,
};
use crate::encoder::Embedding;
use crate::peakfp::{fingerprint, PeakConfig, PeakIndex};
use crate::pqindex::{train, FingerprintIndex, IndexConfig};
use crate::retrieval::{identify_nprobe, judge_top1_nprobe, top1_hit_rate, Embedder, HitJudgment};
use crate::seeding::mix_seed;
use crate::{Error, Result, HOP_SECONDS, SAMPLE_RATE_HZ};

/// Query durations the protocol evaluates, in seconds.
pub const QUERY_LENS_S: [f64; 7] = [1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 15.0];

/// Common RMS every test song is normalized to.
pub const CONCERT_TARGET_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionLevel {
    Low,
    Mid,
    High,
}

impl DistortionLevel {
    pub const ALL: [DistortionLevel; 3] = [
        DistortionLevel::Low,
        DistortionLevel::Mid,
        DistortionLevel::High,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistortionLevel::Low => "low",
            DistortionLevel::Mid => "mid",
            DistortionLevel::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DistortionLevel::Low),
            "mid" => Ok(DistortionLevel::Mid),
            "high" => Ok(DistortionLevel::High),
            other => Err(Error::InvalidArgument(format!("unknown level {other}"))),
        }
    }

    /// Noise severity of each simulated capture.
    pub fn snr_db(&self) -> f64 {
        match self {
            DistortionLevel::Low => 12.0,
            DistortionLevel::Mid => 6.0,
            DistortionLevel::High => 0.0,
        }
    }

    fn tag(&self) -> u64 {
        match self {
            DistortionLevel::Low => 1,
            DistortionLevel::Mid => 2,
            DistortionLevel::High => 3,
        }
    }
}

/// One continuous recording of concatenated test songs with ground-truth
/// boundaries; `level` is `None` for the clean master.
#[derive(Debug, Clone)]
pub struct ProtocolRecording {
    pub level: Option<DistortionLevel>,
    pub audio: AudioBuffer,
    /// (song_id, start_s, end_s), tiling the recording without overlap.
    pub song_boundaries: Vec<(u32, f64, f64)>,
}

/// Normalize every song to a common RMS and concatenate.
pub fn build_concert(songs: &[(u32, AudioBuffer)]) -> Result<ProtocolRecording> {
    if songs.len() < 2 {
        return Err(Error::InvalidArgument(
            "a concert needs at least two songs".into(),
        ));
    }
    let mut samples = Vec::new();
    let mut boundaries = Vec::new();
    let mut cursor_s = 0.0;
    for (song_id, audio) in songs {
        if audio.duration_s() < 5.0 {
            return Err(Error::InvalidArgument(format!(
                "song {song_id} is shorter than 5 s"
            )));
        }
        let normalized = normalize_rms(audio, CONCERT_TARGET_RMS)?;
        let end_s = cursor_s + normalized.duration_s();
        boundaries.push((*song_id, cursor_s, end_s));
        samples.extend_from_slice(&normalized.samples);
        cursor_s = end_s;
    }
    Ok(ProtocolRecording {
        level: None,
        audio: AudioBuffer::new(samples, SAMPLE_RATE_HZ)?,
        song_boundaries: boundaries,
    })
}

/// The deterministic stand-in for a re-recorded capture: a fixed
/// microphone-style band-limit (high-pass 300 Hz and low-pass 3200 Hz, both
/// order 2), room reverb from the pool, and background noise at the level's
/// SNR.
pub fn simulate_recording(
    clean: &ProtocolRecording,
    level: DistortionLevel,
    noise_pool: &[AudioBuffer],
    ir_pool: &[AudioBuffer],
    seed: u64,
) -> Result<ProtocolRecording> {
    if noise_pool.is_empty() {
        return Err(Error::EmptyPool("noise".into()));
    }
    if ir_pool.is_empty() {
        return Err(Error::EmptyPool("impulse responses".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xEC0, level.tag()]));
    let dry = band_limit_and_reverb(&clean.audio, ir_pool, &mut rng)?;
    let noise = &noise_pool[rng.gen_range(0..noise_pool.len())];
    let audio = mix_at_snr(&dry, noise, level.snr_db(), &mut rng)?;
    Ok(ProtocolRecording {
        level: Some(level),
        audio,
        song_boundaries: clean.song_boundaries.clone(),
    })
}

/// The noise-free part of the simulation, exposed so tests can measure the
/// realized SNR of the full pipeline.
pub(crate) fn band_limit_and_reverb(
    audio: &AudioBuffer,
    ir_pool: &[AudioBuffer],
    rng: &mut impl Rng,
) -> Result<AudioBuffer> {
    let hp = butterworth_filter(audio, FilterKind::HighPass, 300.0, 2)?;
    let lp = butterworth_filter(&hp, FilterKind::LowPass, 3200.0, 2)?;
    convolve_ir(&lp, &ir_pool[rng.gen_range(0..ir_pool.len())])
}

/// One report row; every row carries its query count and the config hash.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReportRow {
    pub model_tag: String,
    pub protocol: String,
    pub level_or_snr: String,
    pub query_len_s: f64,
    pub metric_name: String,
    pub value: f64,
    pub n_queries: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub config: serde_json::Value,
    pub config_hash: String,
}

impl EvalReport {
    pub fn new(config: serde_json::Value) -> Self {
        let canonical = config.to_string();
        let digest = sha2::Sha256::digest(canonical.as_bytes());
        let config_hash = digest
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        EvalReport {
            rows: Vec::new(),
            config,
            config_hash,
        }
    }

    pub fn push(
        &mut self,
        model_tag: &str,
        protocol: &str,
        level_or_snr: &str,
        query_len_s: f64,
        metric_name: &str,
        value: f64,
        n_queries: usize,
    ) -> Result<()> {
        if !QUERY_LENS_S.iter().any(|l| (l - query_len_s).abs() < 1e-9) {
            return Err(Error::Eval(format!(
                "query length {query_len_s} outside the protocol set {QUERY_LENS_S:?}"
            )));
        }
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::Eval(format!("metric value {value} outside [0, 100]")));
        }
        self.rows.push(ReportRow {
            model_tag: model_tag.to_string(),
            protocol: protocol.to_string(),
            level_or_snr: level_or_snr.to_string(),
            query_len_s,
            metric_name: metric_name.to_string(),
            value,
            n_queries,
            config_hash: self.config_hash.clone(),
        });
        Ok(())
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model_tag,protocol,level_or_snr,query_len_s,metric_name,value,n_queries,config_hash\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.4},{},{}\n",
                r.model_tag,
                r.protocol,
                r.level_or_snr,
                r.query_len_s,
                r.metric_name,
                r.value,
                r.n_queries,
                r.config_hash
            ));
        }
        out
    }

    /// Write `report.csv` and `report.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(csv.display().to_string(), e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_vec_pretty(self)?)
            .map_err(|e| Error::io(json.display().to_string(), e))
    }

    pub fn value_of(&self, protocol: &str, level_or_snr: &str, query_len_s: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.protocol == protocol
                    && r.level_or_snr == level_or_snr
                    && (r.query_len_s - query_len_s).abs() < 1e-9
            })
            .map(|r| r.value)
    }
}

/// Either retrieval backend, so both protocols run over learned and peak
/// systems alike.
pub enum Identifier<'a> {
    Embedding {
        index: &'a FingerprintIndex,
        embedder: &'a dyn Embedder,
        top_k: usize,
        nprobe: usize,
    },
    Peak {
        index: &'a PeakIndex,
        cfg: &'a PeakConfig,
    },
}

impl Identifier<'_> {
    pub fn identify(&self, query: &AudioBuffer) -> Result<Option<u32>> {
        match self {
            Identifier::Embedding {
                index,
                embedder,
                top_k,
                nprobe,
            } => Ok(identify_nprobe(query, index, *embedder, *top_k, *nprobe)?.winner),
            Identifier::Peak { index, cfg } => {
                let hashes = fingerprint(query, cfg);
                Ok(index.match_query(&hashes).first().map(|m| m.song_id))
            }
        }
    }
}

/// A drawn query window: song truth plus its absolute sample range.
#[derive(Debug, Clone, Copy)]
struct QueryWindow {
    song_id: u32,
    start_sample: usize,
}

/// Draw a query of `len_s` seconds inside a single song, never straddling a
/// boundary.
///
/// Clean-recording queries land on the segment grid relative to the song
/// start (exact ground truth for self-retrieval); simulated-capture queries
/// land at arbitrary sample positions, the way a microphone capture carries
/// no alignment with the database grid.
fn draw_query(
    recording: &ProtocolRecording,
    len_s: f64,
    rng: &mut impl Rng,
) -> Result<QueryWindow> {
    let rate = SAMPLE_RATE_HZ as f64;
    let hop = HOP_SECONDS;
    let len_samples = (len_s * rate).round() as usize;
    let mut window = None;
    for _ in 0..64 {
        let (song_id, song_start, song_end) =
            recording.song_boundaries[rng.gen_range(0..recording.song_boundaries.len())];
        let dur = song_end - song_start;
        if dur < len_s {
            continue;
        }
        let song_start_sample = (song_start * rate).round() as usize;
        let start_sample = if recording.level.is_none() {
            let max_grid = ((dur - len_s) / hop).floor() as usize;
            let g = rng.gen_range(0..=max_grid);
            song_start_sample + (g as f64 * hop * rate).round() as usize
        } else {
            let song_samples = ((song_end - song_start) * rate).round() as usize;
            song_start_sample + rng.gen_range(0..=song_samples - len_samples)
        };
        if start_sample + len_samples > recording.audio.len() {
            continue;
        }
        window = Some(QueryWindow {
            song_id,
            start_sample,
        });
        break;
    }
    window.ok_or_else(|| {
        Error::Eval(format!("no song long enough for a {len_s} s query window"))
    })
}

fn cut(audio: &AudioBuffer, start: usize, len: usize) -> AudioBuffer {
    AudioBuffer {
        samples: audio.samples[start..start + len].to_vec(),
        sample_rate_hz: audio.sample_rate_hz,
    }
}

/// Song accuracy on a protocol recording: `queries_per_len` random in-song
/// windows per length, identified by majority voting.
pub fn run_proposed_eval(
    recording: &ProtocolRecording,
    identifier: &Identifier,
    model_tag: &str,
    query_lens: &[f64],
    queries_per_len: usize,
    seed: u64,
    report: &mut EvalReport,
) -> Result<()> {
    let level_name = recording
        .level
        .map(|l| l.name().to_string())
        .unwrap_or_else(|| "clean".to_string());
    if recording.song_boundaries.is_empty() {
        return Err(Error::Eval("recording has no boundaries".into()));
    }
    if queries_per_len == 0 || query_lens.is_empty() {
        return Ok(());
    }
    // one window per query index, shared across lengths: each shorter query
    // is a prefix of the longest, which pairs the per-length samples
    let max_len = query_lens.iter().fold(0.0f64, |a, l| a.max(*l));
    let windows: Vec<QueryWindow> = (0..queries_per_len)
        .map(|q| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x9E0, q as u64]));
            draw_query(recording, max_len, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    for &len_s in query_lens {
        let len_samples = (len_s * SAMPLE_RATE_HZ as f64).round() as usize;
        let correct: usize = windows
            .par_iter()
            .map(|w| {
                let query = cut(&recording.audio, w.start_sample, len_samples);
                match identifier.identify(&query) {
                    Ok(Some(winner)) if winner == w.song_id => Ok(1usize),
                    Ok(_) => Ok(0),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        let accuracy = 100.0 * correct as f64 / queries_per_len as f64;
        report.push(
            model_tag,
            "proposed",
            &level_name,
            len_s,
            "song_accuracy",
            accuracy,
            queries_per_len,
        )?;
    }
    Ok(())
}

/// Offline-SNR protocol: mix noise at an exact SNR into clean query
/// windows cut from the test songs, then score Top-1 hit rate over every
/// 1 s segment of every query.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline_eval(
    test_songs: &[(u32, AudioBuffer)],
    index: &FingerprintIndex,
    embedder: &dyn Embedder,
    model_tag: &str,
    snr_levels_db: &[f64],
    query_lens: &[f64],
    noise_pool_test: &[AudioBuffer],
    queries_per_len: usize,
    nprobe: usize,
    seed: u64,
    report: &mut EvalReport,
) -> Result<()> {
    if test_songs.is_empty() {
        return Err(Error::Eval("no test songs".into()));
    }
    let rate = SAMPLE_RATE_HZ as f64;
    for &snr in snr_levels_db {
        let snr_name = if snr.is_infinite() {
            "inf".to_string()
        } else {
            format!("{snr}dB")
        };
        for &len_s in query_lens {
            if queries_per_len == 0 {
                continue;
            }
            let judgments: Vec<Vec<HitJudgment>> = (0..queries_per_len)
                .into_par_iter()
                .map(|q| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        seed,
                        0xBA5E,
                        snr.to_bits(),
                        (len_s * 1000.0) as u64,
                        q as u64,
                    ]));
                    // draw a grid-aligned window inside one test song
                    let (song_id, audio) = &test_songs[rng.gen_range(0..test_songs.len())];
                    let dur = audio.duration_s();
                    if dur < len_s {
                        return Err(Error::Eval(format!(
                            "test song {song_id} shorter than {len_s} s"
                        )));
                    }
                    let max_grid = ((dur - len_s) / HOP_SECONDS).floor() as usize;
                    let g = rng.gen_range(0..=max_grid);
                    let start_s = g as f64 * HOP_SECONDS;
                    let start = (start_s * rate).round() as usize;
                    let len = (len_s * rate).round() as usize;
                    let clean = cut(audio, start, len);
                    let noise = &noise_pool_test[rng.gen_range(0..noise_pool_test.len())];
                    let noisy = mix_at_snr(&clean, noise, snr, &mut rng)?;
                    segment_song(&noisy)?
                        .into_iter()
                        .map(|(j, seg)| {
                            judge_top1_nprobe(
                                &seg,
                                index,
                                embedder,
                                *song_id,
                                start_s + j as f64 * HOP_SECONDS,
                                nprobe,
                            )
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let flat: Vec<HitJudgment> = judgments.into_iter().flatten().collect();
            let rate_val = top1_hit_rate(&flat)?;
            report.push(
                model_tag,
                "baseline",
                &snr_name,
                len_s,
                "top1_hit_rate",
                rate_val,
                queries_per_len,
            )?;
        }
    }
    Ok(())
}

/// Offline-SNR song accuracy for the peak baseline; queries are cut on the
/// same 0.5 s segment grid the embedding path uses.
#[allow(clippy::too_many_arguments)]
pub fn run_peak_snr_eval(
    test_songs: &[(u32, AudioBuffer)],
    index: &PeakIndex,
    cfg: &PeakConfig,
    model_tag: &str,
    snr_levels_db: &[f64],
    query_lens: &[f64],
    noise_pool_test: &[AudioBuffer],
    queries_per_len: usize,
    seed: u64,
    report: &mut EvalReport,
) -> Result<()> {
    let hop = (HOP_SECONDS * SAMPLE_RATE_HZ as f64).round() as usize;
    for &snr in snr_levels_db {
        let snr_name = if snr.is_infinite() {
            "inf".to_string()
        } else {
            format!("{snr}dB")
        };
        for &len_s in query_lens {
            if queries_per_len == 0 {
                continue;
            }
            let correct: usize = (0..queries_per_len)
                .into_par_iter()
                .map(|q| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        seed,
                        0x9EAF,
                        snr.to_bits(),
                        (len_s * 1000.0) as u64,
                        q as u64,
                    ]));
                    let (song_id, audio) = &test_songs[rng.gen_range(0..test_songs.len())];
                    let len = (len_s * SAMPLE_RATE_HZ as f64).round() as usize;
                    if audio.len() < len {
                        return Err(Error::Eval("test song too short".into()));
                    }
                    let max_start = (audio.len() - len) / hop;
                    let start = rng.gen_range(0..=max_start) * hop;
                    let clean = cut(audio, start, len);
                    let noisy = if snr.is_infinite() {
                        clean
                    } else {
                        let noise = &noise_pool_test[rng.gen_range(0..noise_pool_test.len())];
                        mix_at_snr(&clean, noise, snr, &mut rng)?
                    };
                    let hashes = fingerprint(&noisy, cfg);
                    let winner = index.match_query(&hashes).first().map(|m| m.song_id);
                    Ok(usize::from(winner == Some(*song_id)))
                })
                .collect::<Result<Vec<usize>>>()?
                .into_iter()
                .sum();
            let accuracy = 100.0 * correct as f64 / queries_per_len as f64;
            report.push(
                model_tag,
                "baseline-peak",
                &snr_name,
                len_s,
                "song_accuracy",
                accuracy,
                queries_per_len,
            )?;
        }
    }
    Ok(())
}

/// One row of the quantization trade-off sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub code_bits: u32,
    /// Bits per stored vector: code_bits * m.
    pub code_length_bits: u64,
    pub code_bytes_total: u64,
    pub serialized_bytes: u64,
    pub accuracy: f64,
}

/// Rebuild the index per m and run the supplied evaluation closure.
pub fn quantization_sweep(
    rows: &[(SegmentRef, Embedding)],
    base: &IndexConfig,
    m_values: &[usize],
    eval: &mut dyn FnMut(&FingerprintIndex) -> Result<f64>,
) -> Result<Vec<SweepRow>> {
    if rows.is_empty() {
        return Err(Error::Eval("no embeddings to sweep".into()));
    }
    for &m in m_values {
        if m == 0 || base.dim % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "m = {m} does not divide the embedding dimension {}",
                base.dim
            )));
        }
    }
    let embeddings: Vec<Embedding> = rows.iter().map(|(_, e)| e.clone()).collect();
    let mut out = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let config = IndexConfig {
            subquantizers: m,
            ..*base
        };
        let books = train(&embeddings, &config)?;
        let mut index = FingerprintIndex::new(config, books)?;
        for (r, e) in rows {
            index.add(*r, e)?;
        }
        index.freeze();
        let accuracy = eval(&index)?;
        let (code_bytes_total, serialized_bytes) = index.size_report();
        out.push(SweepRow {
            m,
            code_bits: config.code_bits,
            code_length_bits: config.code_bits as u64 * m as u64,
            code_bytes_total,
            serialized_bytes,
            accuracy,
        });
    }
    Ok(out)
}

/// Assign ids and normalize a song set for indexing and concert building.
pub fn prepare_corpus(songs: &[AudioBuffer], target_rms: f64) -> Result<Vec<(u32, AudioBuffer)>> {
    songs
        .iter()
        .enumerate()
        .map(|(i, s)| Ok((i as u32, normalize_rms(s, target_rms)?)))
        .collect()
}

/// Embed every energy-passing segment of every song, train codebooks on
/// them, and build the frozen index.
pub fn build_embedding_database(
    songs: &[(u32, AudioBuffer)],
    embedder: &dyn Embedder,
    config: &IndexConfig,
) -> Result<FingerprintIndex> {
    let rows = embed_corpus(songs, embedder)?;
    let embeddings: Vec<Embedding> = rows.iter().map(|(_, e)| e.clone()).collect();
    let books = train(&embeddings, config)?;
    let mut index = FingerprintIndex::new(*config, books)?;
    for (r, e) in &rows {
        index.add(*r, e)?;
    }
    index.freeze();
    Ok(index)
}

/// (SegmentRef, Embedding) rows for all segments that pass the energy gate.
pub fn embed_corpus(
    songs: &[(u32, AudioBuffer)],
    embedder: &dyn Embedder,
) -> Result<Vec<(SegmentRef, Embedding)>> {
    let per_song: Vec<Vec<(SegmentRef, Embedding)>> = songs
        .par_iter()
        .map(|(song_id, audio)| {
            segment_song(audio)?
                .into_iter()
                .filter(|(_, seg)| passes_energy_gate(seg))
                .map(|(i, seg)| Ok((SegmentRef::new(*song_id, i), embedder.embed(&seg)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_song.into_iter().flatten().collect())
}

/// Fingerprint every song into a frozen peak index.
pub fn build_peak_database(songs: &[(u32, AudioBuffer)], cfg: &PeakConfig) -> Result<PeakIndex> {
    let hashes: Vec<(u32, Vec<crate::peakfp::LandmarkHash>)> = songs
        .par_iter()
        .map(|(id, audio)| (*id, fingerprint(audio, cfg)))
        .collect();
    let mut index = PeakIndex::new();
    for (id, h) in hashes {
        index.add_song(id, &h);
    }
    index.freeze();
    Ok(index)
}
