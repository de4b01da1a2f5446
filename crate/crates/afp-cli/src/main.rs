//! `afp` — build, query, and evaluate song-identification databases.

mod config;

use std::path::{Path, PathBuf};

use afp_core::augment::{manifest_70_20_10, Pool, PoolSplit};
use afp_core::corpus::{synth_ir, synth_noise, synth_song, NoiseKind, SynthSongSpec};
use afp_core::dsp::{load_wav, resample, save_wav, AudioBuffer};
use afp_core::encoder::{import_embeddings, train, EncoderParams};
use afp_core::eval::{
    build_concert, build_embedding_database, build_peak_database, embed_corpus, prepare_corpus,
    quantization_sweep, run_baseline_eval, run_proposed_eval, simulate_recording,
    DistortionLevel, EvalReport, Identifier, CONCERT_TARGET_RMS,
};
use afp_core::peakfp::PeakIndex;
use afp_core::pqindex::{
    load_song_table, save_song_table, FingerprintIndex, IndexConfig, SongMeta, SongTable,
};
use afp_core::retrieval::{identify, EncoderEmbedder};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "afp", about = "audio fingerprinting engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config file; flags override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize (or import) the corpus: songs, noise pool, impulse responses.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
        /// Data directory to create.
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Number of synthetic songs.
        #[arg(long)]
        songs: Option<usize>,
        /// Duration per song in seconds.
        #[arg(long)]
        song_duration: Option<f64>,
        /// Import songs from an existing WAV directory instead of synthesizing.
        #[arg(long)]
        songs_dir: Option<PathBuf>,
    },
    /// Train the fingerprint encoder on the ingested corpus.
    TrainEncoder {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Run directory for the trained weights and loss history.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_pairs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Distortion pipeline for positives: proposed | baseline.
        #[arg(long)]
        pipeline: Option<String>,
    },
    /// Embed the corpus and build the product-quantized index.
    BuildIndex {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Trained encoder weights (.afpn), or use --embeddings.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Pre-computed embedding file (.afpe) instead of an encoder.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value = "runs/index/db.afpi")]
        out: PathBuf,
        #[arg(long)]
        subquantizers: Option<usize>,
        #[arg(long)]
        code_bits: Option<u32>,
        #[arg(long)]
        coarse_cells: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Build the spectral-peak baseline index.
    BuildPeakIndex {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "runs/index/db.afph")]
        out: PathBuf,
    },
    /// Identify the song in an audio clip.
    Query {
        /// Embedding index (.afpi).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Peak index (.afph) for the classical matcher.
        #[arg(long)]
        peak_index: Option<PathBuf>,
        /// Encoder weights; defaults to the path recorded in the index sidecar.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long, default_value_t = 4)]
        top_k: usize,
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Offline-SNR protocol: Top-1 hit rate over noisy query segments.
    EvalBaseline {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "runs/eval-baseline")]
        out: PathBuf,
        /// Comma-separated SNR levels in dB.
        #[arg(long)]
        snrs: Option<String>,
        /// Comma-separated query lengths in seconds.
        #[arg(long)]
        lens: Option<String>,
        #[arg(long)]
        queries_per_len: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulated-recording protocol: song accuracy by majority voting.
    EvalProposed {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        peak_index: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "runs/eval-proposed")]
        out: PathBuf,
        /// Comma-separated levels from clean,low,mid,high.
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        lens: Option<String>,
        #[arg(long)]
        queries_per_len: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Quantization trade-off: rebuild the index across m values.
    SweepPq {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
        /// Comma-separated subquantizer counts.
        #[arg(long, default_value = "4,8,16,32")]
        m: String,
        #[arg(long)]
        queries_per_len: Option<usize>,
    },
    /// Print header information for any engine file.
    Inspect {
        #[arg(long)]
        file: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(classify_exit(&e));
        }
    }
}

/// 1 for user errors (bad input, missing files, malformed config), 2 for
/// internal failures.
fn classify_exit(e: &anyhow::Error) -> i32 {
    use afp_core::Error as E;
    if let Some(core) = e.downcast_ref::<E>() {
        return match core {
            E::Io { .. }
            | E::WavFormat { .. }
            | E::UnsupportedCodec { .. }
            | E::InvalidArgument(_)
            | E::AudioTooShort { .. }
            | E::SampleRateMismatch { .. }
            | E::EmptyPool(_)
            | E::TooFewPoints { .. }
            | E::BadFileFormat { .. }
            | E::BadEmbedding(_)
            | E::Json(_)
            | E::EmptyIndex
            | E::SnrUndefined(_) => 1,
            E::IndexNotTrained | E::NonFiniteActivation | E::Training(_) | E::Eval(_) => 2,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some()
        || e.downcast_ref::<serde_json::Error>().is_some()
        || e.downcast_ref::<clap::Error>().is_some()
    {
        return 1;
    }
    // anyhow context strings produced by user-input validation
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest {
            config,
            out,
            songs,
            song_duration,
            songs_dir,
        } => ingest(config, out, songs, song_duration, songs_dir),
        Command::TrainEncoder {
            config,
            data,
            out,
            epochs,
            batch_pairs,
            seed,
            pipeline,
        } => train_encoder(config, data, out, epochs, batch_pairs, seed, pipeline),
        Command::BuildIndex {
            config,
            data,
            params,
            embeddings,
            out,
            subquantizers,
            code_bits,
            coarse_cells,
            nprobe,
        } => build_index(
            config,
            data,
            params,
            embeddings,
            out,
            subquantizers,
            code_bits,
            coarse_cells,
            nprobe,
        ),
        Command::BuildPeakIndex { config, data, out } => build_peak_index(config, data, out),
        Command::Query {
            index,
            peak_index,
            params,
            audio,
            top_k,
            nprobe,
        } => query(index, peak_index, params, audio, top_k, nprobe),
        Command::EvalBaseline {
            config,
            data,
            index,
            params,
            out,
            snrs,
            lens,
            queries_per_len,
            seed,
        } => eval_baseline(config, data, index, params, out, snrs, lens, queries_per_len, seed),
        Command::EvalProposed {
            config,
            data,
            index,
            peak_index,
            params,
            out,
            levels,
            lens,
            queries_per_len,
            seed,
        } => eval_proposed(
            config,
            data,
            index,
            peak_index,
            params,
            out,
            levels,
            lens,
            queries_per_len,
            seed,
        ),
        Command::SweepPq {
            config,
            data,
            params,
            out,
            m,
            queries_per_len,
        } => sweep_pq(config, data, params, out, m, queries_per_len),
        Command::Inspect { file } => inspect(file),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} entry {p:?}: {e}"))
        })
        .collect()
}

fn song_file_name(i: usize) -> String {
    format!("song-{i:03}.wav")
}

// --- ingest ---

fn ingest(
    config: ConfigArg,
    out: PathBuf,
    songs: Option<usize>,
    song_duration: Option<f64>,
    songs_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config.config.as_deref())?;
    if let Some(n) = songs {
        cfg.corpus.songs = n;
    }
    if let Some(d) = song_duration {
        cfg.corpus.song_duration_s = d;
    }

    let songs_out = out.join("songs");
    let noise_out = out.join("noise");
    let ir_out = out.join("ir");
    for dir in [&songs_out, &noise_out, &ir_out] {
        std::fs::create_dir_all(dir)?;
    }

    let mut table = SongTable::new();
    match songs_dir {
        Some(dir) => {
            let mut names: Vec<String> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
                .collect();
            names.sort();
            if names.is_empty() {
                bail!("no .wav files under {}", dir.display());
            }
            for (i, name) in names.iter().enumerate() {
                let audio = load_wav(dir.join(name))?;
                let audio = resample(&audio, 8000)?;
                let dest = songs_out.join(song_file_name(i));
                save_wav(&dest, &audio)?;
                table.insert(
                    i as u32,
                    SongMeta {
                        title: name.clone(),
                        source_path: dir.join(name).display().to_string(),
                        duration_s: audio.duration_s(),
                    },
                );
            }
        }
        None => {
            for i in 0..cfg.corpus.songs {
                let audio = synth_song(&SynthSongSpec {
                    seed: cfg.corpus.song_seed + i as u64,
                    duration_s: cfg.corpus.song_duration_s,
                    ..SynthSongSpec::default()
                })?;
                let dest = songs_out.join(song_file_name(i));
                save_wav(&dest, &audio)?;
                table.insert(
                    i as u32,
                    SongMeta {
                        title: format!("synth-{:04}", cfg.corpus.song_seed + i as u64),
                        source_path: dest.display().to_string(),
                        duration_s: audio.duration_s(),
                    },
                );
            }
        }
    }
    save_song_table(out.join("songs.json"), &table)?;

    // noise pool: several seeds per kind, split 70-20-10 by manifest
    let mut noise_names = Vec::new();
    for kind in NoiseKind::ALL {
        for j in 0..4u64 {
            let noise = synth_noise(kind, cfg.corpus.noise_duration_s, cfg.corpus.noise_seed + j)?;
            let name = format!("{}-{j:02}.wav", kind.name());
            save_wav(noise_out.join(&name), &noise)?;
            noise_names.push(name);
        }
    }
    noise_names.sort();
    let manifest = manifest_70_20_10(&noise_names);
    std::fs::write(
        noise_out.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;

    for j in 0..cfg.corpus.irs {
        let rt60 = 0.12 + 0.12 * (j as f64 / cfg.corpus.irs.max(1) as f64);
        let ir = synth_ir(rt60, cfg.corpus.ir_seed + j as u64)?;
        save_wav(ir_out.join(format!("ir-{j:02}.wav")), &ir)?;
    }

    cfg.snapshot_to(&out)?;
    println!(
        "ingested {} songs, {} noise files, {} impulse responses into {}",
        table.len(),
        noise_names.len(),
        cfg.corpus.irs,
        out.display()
    );
    Ok(())
}

// --- shared loading ---

fn load_songs(data: &Path) -> anyhow::Result<Vec<AudioBuffer>> {
    let pool = Pool::load_dir(data.join("songs"), PoolSplit::All)?;
    if pool.is_empty() {
        bail!("no songs under {}", data.join("songs").display());
    }
    Ok(pool.buffers)
}

fn load_pools(data: &Path, noise_split: PoolSplit) -> anyhow::Result<(Pool, Pool)> {
    let noise = Pool::load_dir(data.join("noise"), noise_split)?;
    let ir = Pool::load_dir(data.join("ir"), PoolSplit::All)?;
    if noise.is_empty() {
        bail!("noise pool is empty");
    }
    if ir.is_empty() {
        bail!("impulse response pool is empty");
    }
    Ok((noise, ir))
}

// --- train-encoder ---

fn train_encoder(
    config: ConfigArg,
    data: PathBuf,
    out: PathBuf,
    epochs: Option<usize>,
    batch_pairs: Option<usize>,
    seed: Option<u64>,
    pipeline: Option<String>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config.config.as_deref())?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = batch_pairs {
        cfg.train.batch_pairs = n;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(p) = pipeline {
        cfg.train.pipeline = match p.as_str() {
            "proposed" => afp_core::augment::Pipeline::Proposed,
            "baseline" => afp_core::augment::Pipeline::Baseline,
            other => bail!("unknown pipeline {other}; use proposed or baseline"),
        };
    }

    let songs = load_songs(&data)?;
    let (noise, ir) = load_pools(&data, PoolSplit::Train)?;
    let outcome = train(
        &songs,
        &noise.buffers,
        &ir.buffers,
        &cfg.augment,
        &cfg.encoder,
        &cfg.train,
    )?;

    std::fs::create_dir_all(&out)?;
    let weights = out.join("encoder.afpn");
    outcome.params.save(&weights)?;
    let mut history = String::from("epoch,probe_loss\n");
    for (i, loss) in outcome.loss_history.iter().enumerate() {
        history.push_str(&format!("{},{:.6}\n", i + 1, loss));
    }
    std::fs::write(out.join("loss_history.csv"), history)?;
    cfg.snapshot_to(&out)?;
    println!(
        "trained {} epochs; first epoch loss {:.4}, last {:.4}; weights at {}",
        outcome.loss_history.len(),
        outcome.loss_history.first().copied().unwrap_or(f64::NAN),
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        weights.display()
    );
    Ok(())
}

// --- build-index ---

#[derive(serde::Serialize, serde::Deserialize, Default)]
struct IndexSidecar {
    embedder_params: Option<String>,
    songs: SongTable,
}

fn sidecar_path(index: &Path) -> PathBuf {
    let mut os = index.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

#[allow(clippy::too_many_arguments)]
fn build_index(
    config: ConfigArg,
    data: PathBuf,
    params: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    out: PathBuf,
    subquantizers: Option<usize>,
    code_bits: Option<u32>,
    coarse_cells: Option<usize>,
    nprobe: Option<usize>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config.config.as_deref())?;
    if let Some(m) = subquantizers {
        cfg.index.subquantizers = m;
    }
    if let Some(b) = code_bits {
        cfg.index.code_bits = b;
    }
    if let Some(k) = coarse_cells {
        cfg.index.coarse_cells = k;
    }
    if let Some(p) = nprobe {
        cfg.index.nprobe = p;
    }

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }

    let index = match (&params, &embeddings) {
        (Some(weights_path), None) => {
            let weights = EncoderParams::load(weights_path)?;
            cfg.index.dim = weights.cfg.embed_dim;
            let songs = load_songs(&data)?;
            let corpus = prepare_corpus(&songs, CONCERT_TARGET_RMS)?;
            let embedder = EncoderEmbedder { params: &weights };
            build_embedding_database(&corpus, &embedder, &cfg.index.clone().into())?
        }
        (None, Some(emb_path)) => {
            let rows = import_embeddings(emb_path)?;
            cfg.index.dim = rows[0].1.dim();
            let config: IndexConfig = cfg.index.clone().into();
            let all: Vec<afp_core::encoder::Embedding> =
                rows.iter().map(|(_, e)| e.clone()).collect();
            let books = afp_core::pqindex::train(&all, &config)?;
            let mut index = FingerprintIndex::new(config, books)?;
            for (r, e) in &rows {
                index.add(*r, e)?;
            }
            index.freeze();
            index
        }
        _ => bail!("provide exactly one of --params or --embeddings"),
    };

    index.save(&out)?;
    let songs_meta = load_song_table(data.join("songs.json")).unwrap_or_default();
    let sidecar = IndexSidecar {
        embedder_params: params.map(|p| p.display().to_string()),
        songs: songs_meta,
    };
    std::fs::write(sidecar_path(&out), serde_json::to_vec_pretty(&sidecar)?)?;

    let (code_bytes, serialized) = index.size_report();
    println!(
        "indexed {} vectors; code payload {code_bytes} B, file {serialized} B at {}",
        index.len(),
        out.display()
    );
    Ok(())
}

fn build_peak_index(config: ConfigArg, data: PathBuf, out: PathBuf) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config.config.as_deref())?;
    let songs = load_songs(&data)?;
    let corpus = prepare_corpus(&songs, CONCERT_TARGET_RMS)?;
    let index = build_peak_database(&corpus, &cfg.peaks)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    index.save(&out)?;
    println!(
        "peak index holds {} landmark entries at {}",
        index.entry_count(),
        out.display()
    );
    Ok(())
}

// --- query ---

fn query(
    index: Option<PathBuf>,
    peak_index: Option<PathBuf>,
    params: Option<PathBuf>,
    audio_path: PathBuf,
    top_k: usize,
    nprobe: Option<usize>,
) -> anyhow::Result<()> {
    let audio = load_wav(&audio_path)?;
    let audio = resample(&audio, 8000)?;

    match (index, peak_index) {
        (Some(index_path), None) => {
            let index = FingerprintIndex::load(&index_path)?;
            let sidecar: IndexSidecar = std::fs::read_to_string(sidecar_path(&index_path))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok())
                .unwrap_or_default();
            let weights_path = match params {
                Some(p) => p,
                None => PathBuf::from(sidecar.embedder_params.clone().ok_or_else(|| {
                    anyhow::anyhow!(
                        "index sidecar names no encoder weights; pass --params explicitly"
                    )
                })?),
            };
            let weights = EncoderParams::load(&weights_path)?;
            let embedder = EncoderEmbedder { params: &weights };
            let result = match nprobe {
                Some(np) => {
                    afp_core::retrieval::identify_nprobe(&audio, &index, &embedder, top_k, np)?
                }
                None => identify(&audio, &index, &embedder, top_k)?,
            };
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        (None, Some(peak_path)) => {
            let index = PeakIndex::load(&peak_path)?;
            let cfg = afp_core::peakfp::PeakConfig::default();
            let hashes = afp_core::peakfp::fingerprint(&audio, &cfg);
            let matches = index.match_query(&hashes);
            let result = serde_json::json!({
                "winner": matches.first().map(|m| m.song_id),
                "matches": matches.iter().take(top_k).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        _ => bail!("provide exactly one of --index or --peak-index"),
    }
    Ok(())
}

// --- evals ---

fn resolve_embedder_paths(
    index_path: &Path,
    params: Option<PathBuf>,
) -> anyhow::Result<(FingerprintIndex, EncoderParams)> {
    let index = FingerprintIndex::load(index_path)?;
    let sidecar: IndexSidecar = std::fs::read_to_string(sidecar_path(index_path))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let weights_path = match params {
        Some(p) => p,
        None => PathBuf::from(sidecar.embedder_params.ok_or_else(|| {
            anyhow::anyhow!("index sidecar names no encoder weights; pass --params")
        })?),
    };
    let weights = EncoderParams::load(&weights_path)?;
    Ok((index, weights))
}

#[allow(clippy::too_many_arguments)]
fn eval_baseline(
    config: ConfigArg,
    data: PathBuf,
    index_path: PathBuf,
    params: Option<PathBuf>,
    out: PathBuf,
    snrs: Option<String>,
    lens: Option<String>,
    queries_per_len: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config.config.as_deref())?;
    if let Some(s) = snrs {
        cfg.eval.snr_levels_db = parse_list(&s, "snr")?;
    }
    if let Some(l) = lens {
        cfg.eval.query_lens_s = parse_list(&l, "length")?;
    }
    if let Some(q) = queries_per_len {
        cfg.eval.queries_per_len = q;
    }
    if let Some(s) = seed {
        cfg.eval.seed = s;
    }

    let (index, weights) = resolve_embedder_paths(&index_path, params)?;
    let embedder = EncoderEmbedder { params: &weights };
    let songs = load_songs(&data)?;
    let corpus = prepare_corpus(&songs, CONCERT_TARGET_RMS)?;
    let (noise_test, _) = load_pools(&data, PoolSplit::Test)?;

    let mut report = EvalReport::new(cfg.snapshot_json());
    run_baseline_eval(
        &corpus,
        &index,
        &embedder,
        "encoder",
        &cfg.eval.snr_levels_db,
        &cfg.eval.query_lens_s,
        &noise_test.buffers,
        cfg.eval.queries_per_len,
        index.config.nprobe,
        cfg.eval.seed,
        &mut report,
    )?;
    report.save(&out)?;
    cfg.snapshot_to(&out)?;
    println!("{}", report.to_csv());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_proposed(
    config: ConfigArg,
    data: PathBuf,
    index_path: Option<PathBuf>,
    peak_index_path: Option<PathBuf>,
    params: Option<PathBuf>,
    out: PathBuf,
    levels: Option<String>,
    lens: Option<String>,
    queries_per_len: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config.config.as_deref())?;
    if let Some(l) = levels {
        cfg.eval.levels = parse_list(&l, "level")?;
    }
    if let Some(l) = lens {
        cfg.eval.query_lens_s = parse_list(&l, "length")?;
    }
    if let Some(q) = queries_per_len {
        cfg.eval.queries_per_len = q;
    }
    if let Some(s) = seed {
        cfg.eval.seed = s;
    }

    let songs = load_songs(&data)?;
    let corpus = prepare_corpus(&songs, CONCERT_TARGET_RMS)?;
    let concert_songs: Vec<(u32, AudioBuffer)> = corpus
        .iter()
        .take(cfg.eval.concert_songs.max(2))
        .cloned()
        .collect();
    let concert = build_concert(&concert_songs)?;
    let (noise_test, ir) = load_pools(&data, PoolSplit::Test)?;

    let mut report = EvalReport::new(cfg.snapshot_json());

    let loaded;
    let weights;
    let embedder;
    let peak_loaded;
    let peak_cfg = cfg.peaks;
    let identifier = match (&index_path, &peak_index_path) {
        (Some(ip), None) => {
            let (i, w) = resolve_embedder_paths(ip, params)?;
            loaded = i;
            weights = w;
            embedder = EncoderEmbedder { params: &weights };
            Identifier::Embedding {
                index: &loaded,
                embedder: &embedder,
                top_k: cfg.eval.top_k,
                nprobe: loaded.config.nprobe,
            }
        }
        (None, Some(pp)) => {
            peak_loaded = PeakIndex::load(pp)?;
            Identifier::Peak {
                index: &peak_loaded,
                cfg: &peak_cfg,
            }
        }
        _ => bail!("provide exactly one of --index or --peak-index"),
    };

    for level_name in &cfg.eval.levels {
        let recording = if level_name == "clean" {
            concert.clone()
        } else {
            simulate_recording(
                &concert,
                DistortionLevel::parse(level_name)?,
                &noise_test.buffers,
                &ir.buffers,
                cfg.eval.seed,
            )?
        };
        run_proposed_eval(
            &recording,
            &identifier,
            "encoder",
            &cfg.eval.query_lens_s,
            cfg.eval.queries_per_len,
            cfg.eval.seed,
            &mut report,
        )?;
    }
    report.save(&out)?;
    cfg.snapshot_to(&out)?;
    println!("{}", report.to_csv());
    Ok(())
}

fn sweep_pq(
    config: ConfigArg,
    data: PathBuf,
    params: PathBuf,
    out: PathBuf,
    m: String,
    queries_per_len: Option<usize>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config.config.as_deref())?;
    if let Some(q) = queries_per_len {
        cfg.eval.queries_per_len = q;
    }
    let m_values: Vec<usize> = parse_list(&m, "m")?;

    let weights = EncoderParams::load(&params)?;
    cfg.index.dim = weights.cfg.embed_dim;
    let embedder = EncoderEmbedder { params: &weights };
    let songs = load_songs(&data)?;
    let corpus = prepare_corpus(&songs, CONCERT_TARGET_RMS)?;
    let rows = embed_corpus(&corpus, &embedder)?;

    let concert_songs: Vec<(u32, AudioBuffer)> = corpus
        .iter()
        .take(cfg.eval.concert_songs.max(2))
        .cloned()
        .collect();
    let concert = build_concert(&concert_songs)?;
    let (noise_test, ir) = load_pools(&data, PoolSplit::Test)?;
    let recording = simulate_recording(
        &concert,
        DistortionLevel::Mid,
        &noise_test.buffers,
        &ir.buffers,
        cfg.eval.seed,
    )?;

    let base: IndexConfig = cfg.index.clone().into();
    let top_k = cfg.eval.top_k;
    let queries = cfg.eval.queries_per_len;
    let seed = cfg.eval.seed;
    let sweep = quantization_sweep(&rows, &base, &m_values, &mut |index| {
        let identifier = Identifier::Embedding {
            index,
            embedder: &embedder,
            top_k,
            nprobe: index.config.nprobe,
        };
        let mut r = EvalReport::new(serde_json::json!({"sweep": true}));
        run_proposed_eval(&recording, &identifier, "sweep", &[5.0], queries, seed, &mut r)?;
        Ok(r.rows[0].value)
    })?;

    std::fs::create_dir_all(&out)?;
    let mut csv = String::from("m,code_bits,code_length_bits,code_bytes_total,serialized_bytes,accuracy_5s_mid\n");
    for row in &sweep {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.4}\n",
            row.m,
            row.code_bits,
            row.code_length_bits,
            row.code_bytes_total,
            row.serialized_bytes,
            row.accuracy
        ));
    }
    std::fs::write(out.join("sweep.csv"), &csv)?;
    std::fs::write(out.join("sweep.json"), serde_json::to_vec_pretty(&sweep)?)?;
    cfg.snapshot_to(&out)?;
    println!("{csv}");
    Ok(())
}

fn inspect(file: PathBuf) -> anyhow::Result<()> {
    let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
    if bytes.len() < 4 {
        bail!("file too small to identify");
    }
    let magic = &bytes[0..4];
    let info = match magic {
        b"AFPI" => {
            let index = FingerprintIndex::load(&file)?;
            let (code_bytes, serialized) = index.size_report();
            serde_json::json!({
                "kind": "pq-index",
                "dim": index.config.dim,
                "subquantizers": index.config.subquantizers,
                "code_bits": index.config.code_bits,
                "coarse_cells": index.config.coarse_cells,
                "nprobe": index.config.nprobe,
                "vectors": index.len(),
                "code_bytes": code_bytes,
                "serialized_bytes": serialized,
            })
        }
        b"AFPH" => {
            let index = PeakIndex::load(&file)?;
            serde_json::json!({
                "kind": "peak-index",
                "entries": index.entry_count(),
            })
        }
        b"AFPE" => {
            let rows = import_embeddings(&file)?;
            serde_json::json!({
                "kind": "embeddings",
                "rows": rows.len(),
                "dim": rows.first().map(|(_, e)| e.dim()).unwrap_or(0),
            })
        }
        b"AFPN" => {
            let params = EncoderParams::load(&file)?;
            serde_json::json!({
                "kind": "encoder-weights",
                "embed_dim": params.cfg.embed_dim,
                "channels": params.cfg.channels,
                "parameters": params.n_params(),
            })
        }
        b"RIFF" => {
            let audio = load_wav(&file)?;
            serde_json::json!({
                "kind": "wav",
                "sample_rate_hz": audio.sample_rate_hz,
                "samples": audio.len(),
                "duration_s": audio.duration_s(),
                "rms": audio.rms(),
            })
        }
        _ => bail!("unrecognized magic {:?}", &magic),
    };
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}
