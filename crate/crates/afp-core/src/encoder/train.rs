//! Contrastive training: sample N one-second fragments from N different
//! songs, distort each to form rows N+1..2N, minimize the batch loss with
//! momentum SGD under a cosine learning-rate schedule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{batch_loss, batch_loss_with_grad};
use super::net::{backward, forward_cached, EncoderConfig, EncoderParams};
use crate::augment::{AugmentConfig, Pipeline};
use crate::dsp::{mel_spectrogram, AudioBuffer, Spectrogram};
use crate::seeding::mix_seed;
use crate::{Error, Result, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// N: positives per batch; the batch holds 2N rows.
    pub batch_pairs: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub momentum: f64,
    /// 0 selects ceil(songs / N).
    pub batches_per_epoch: usize,
    pub seed: u64,
    /// Which distortion pipeline produces the positives.
    pub pipeline: Pipeline,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_pairs: 32,
            temperature: 0.05,
            epochs: 120,
            learning_rate: 3e-3,
            lr_floor: 1e-7,
            momentum: 0.9,
            batches_per_epoch: 0,
            seed: 0,
            pipeline: Pipeline::Proposed,
        }
    }
}

pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Loss on a fixed probe batch evaluated after every epoch; constant
    /// whenever the parameters stop changing.
    pub loss_history: Vec<f64>,
}

/// One assembled training batch; rows 0..N are clean spectrograms, the
/// parallel `augmented` vector holds their distorted counterparts (row N+k
/// of the loss input is `augmented[k]`).
pub struct Batch {
    pub clean: Vec<Spectrogram>,
    pub augmented: Vec<Spectrogram>,
    /// (song index, start sample) provenance per pair.
    pub sources: Vec<(usize, usize)>,
    /// Per-item rng seed that drove the distortion draw, for replay.
    pub aug_seeds: Vec<u64>,
}

const TAG_INIT: u64 = 1;
const TAG_PROBE: u64 = 2;
const TAG_BATCH: u64 = 3;
const TAG_SONGS: u64 = 4;
const TAG_ITEM: u64 = 5;
const TAG_AUG: u64 = 6;

/// Sample N fragments from N distinct songs and distort each.
pub fn assemble_batch(
    songs: &[AudioBuffer],
    noise_pool: &[AudioBuffer],
    ir_pool: &[AudioBuffer],
    aug_cfg: &AugmentConfig,
    pipeline: Pipeline,
    n_pairs: usize,
    batch_seed: u64,
) -> Result<Batch> {
    if songs.len() < n_pairs {
        return Err(Error::Training(format!(
            "need at least {n_pairs} distinct songs per batch, corpus has {}",
            songs.len()
        )));
    }
    let window = SAMPLE_RATE_HZ as usize;
    // choose N distinct songs
    let mut order: Vec<usize> = (0..songs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[batch_seed, TAG_SONGS]));
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order.truncate(n_pairs);

    let items: Vec<Result<(Spectrogram, Spectrogram, (usize, usize), u64)>> = order
        .par_iter()
        .enumerate()
        .map(|(k, &song_idx)| {
            let song = &songs[song_idx];
            if song.len() < window {
                return Err(Error::AudioTooShort {
                    samples: song.len(),
                    rate: song.sample_rate_hz,
                });
            }
            let mut item_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[batch_seed, TAG_ITEM, k as u64]));
            let start = item_rng.gen_range(0..=song.len() - window);
            let fragment = AudioBuffer {
                samples: song.samples[start..start + window].to_vec(),
                sample_rate_hz: song.sample_rate_hz,
            };
            let aug_seed = mix_seed(&[batch_seed, TAG_AUG, k as u64]);
            let mut aug_rng = ChaCha8Rng::seed_from_u64(aug_seed);
            let distorted = pipeline.run(&fragment, noise_pool, ir_pool, aug_cfg, &mut aug_rng)?;
            let clean_spec = mel_spectrogram(&fragment)?;
            let aug_spec = mel_spectrogram(&distorted)?;
            Ok((clean_spec, aug_spec, (song_idx, start), aug_seed))
        })
        .collect();

    let mut batch = Batch {
        clean: Vec::with_capacity(n_pairs),
        augmented: Vec::with_capacity(n_pairs),
        sources: Vec::with_capacity(n_pairs),
        aug_seeds: Vec::with_capacity(n_pairs),
    };
    for item in items {
        let (c, a, src, seed) = item?;
        batch.clean.push(c);
        batch.augmented.push(a);
        batch.sources.push(src);
        batch.aug_seeds.push(seed);
    }
    Ok(batch)
}

fn batch_rows(batch: &Batch) -> Vec<&Spectrogram> {
    batch.clean.iter().chain(batch.augmented.iter()).collect()
}

/// Loss and flat parameter gradient over an ordered 2N-row batch.
pub fn batch_parameter_gradient(
    params: &EncoderParams,
    rows: &[&Spectrogram],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    batch_gradient(params, rows, tau)
}

fn batch_gradient(
    params: &EncoderParams,
    rows: &[&Spectrogram],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let caches: Vec<_> = rows
        .par_iter()
        .map(|spec| forward_cached(params, spec))
        .collect::<Result<Vec<_>>>()?;
    let embeddings: Vec<Vec<f64>> = caches.iter().map(|c| c.y.clone()).collect();
    let (loss, d_embed) = batch_loss_with_grad(&embeddings, tau)?;

    let partials: Vec<Vec<f64>> = caches
        .par_iter()
        .zip(d_embed.par_iter())
        .map(|(cache, dy)| {
            let mut g = vec![0.0; params.n_params()];
            backward(params, cache, dy, &mut g);
            g
        })
        .collect();
    let mut grad = vec![0.0; params.n_params()];
    for partial in &partials {
        for (g, p) in grad.iter_mut().zip(partial) {
            *g += p;
        }
    }
    Ok((loss, grad))
}

fn batch_loss_only(params: &EncoderParams, rows: &[&Spectrogram], tau: f64) -> Result<f64> {
    let embeddings: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|spec| forward_cached(params, spec).map(|c| c.y))
        .collect::<Result<Vec<_>>>()?;
    batch_loss(&embeddings, tau)
}

/// Train the encoder per the contrastive procedure; returns final
/// parameters and the per-epoch probe loss history.
pub fn train(
    songs: &[AudioBuffer],
    noise_pool: &[AudioBuffer],
    ir_pool: &[AudioBuffer],
    aug_cfg: &AugmentConfig,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.batch_pairs == 0 {
        return Err(Error::Training("batch_pairs must be >= 1".into()));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::Training("temperature must be positive".into()));
    }
    if songs.len() < cfg.batch_pairs {
        return Err(Error::Training(format!(
            "corpus holds {} songs, need >= {}",
            songs.len(),
            cfg.batch_pairs
        )));
    }
    aug_cfg.validate()?;
    let mut params = EncoderParams::init(enc_cfg, mix_seed(&[cfg.seed, TAG_INIT]))?;

    let batches_per_epoch = if cfg.batches_per_epoch > 0 {
        cfg.batches_per_epoch
    } else {
        songs.len().div_ceil(cfg.batch_pairs)
    };
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);

    let probe = assemble_batch(
        songs,
        noise_pool,
        ir_pool,
        aug_cfg,
        cfg.pipeline,
        cfg.batch_pairs,
        mix_seed(&[cfg.seed, TAG_PROBE]),
    )?;
    let probe_rows = batch_rows(&probe);

    let mut velocity = vec![0.0f64; params.n_params()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        for b in 0..batches_per_epoch {
            let batch_seed = mix_seed(&[cfg.seed, TAG_BATCH, epoch as u64, b as u64]);
            let batch = assemble_batch(
                songs,
                noise_pool,
                ir_pool,
                aug_cfg,
                cfg.pipeline,
                cfg.batch_pairs,
                batch_seed,
            )?;
            let rows = batch_rows(&batch);
            let (loss, grad) = batch_gradient(&params, &rows, cfg.temperature)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch} batch {b}"
                )));
            }
            let progress = step as f64 / (total_steps - 1).max(1) as f64;
            let lr = cfg.lr_floor
                + 0.5 * (cfg.learning_rate - cfg.lr_floor)
                    * (1.0 + (std::f64::consts::PI * progress).cos());
            for ((theta, v), g) in params.theta.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * g;
                *theta += *v;
            }
            step += 1;
        }
        history.push(batch_loss_only(&params, &probe_rows, cfg.temperature)?);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// Compare an externally supplied gradient against central finite
/// differences on the probed parameter indices; returns the worst relative
/// error.
pub fn max_rel_error_against_fd(
    params: &EncoderParams,
    rows: &[&Spectrogram],
    tau: f64,
    probes: &[usize],
    grad: &[f64],
) -> Result<f64> {
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut theta = params.clone();
    for &i in probes {
        let orig = theta.theta[i];
        theta.theta[i] = orig + h;
        let plus = batch_loss_only(&theta, rows, tau)?;
        theta.theta[i] = orig - h;
        let minus = batch_loss_only(&theta, rows, tau)?;
        theta.theta[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / fd.abs().max(1e-10);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Validate the analytic gradient of the batch loss against central finite
/// differences on `probe_count` randomly chosen parameters.
pub fn gradient_check(
    params: &EncoderParams,
    batch: &Batch,
    tau: f64,
    probe_count: usize,
    seed: u64,
) -> Result<f64> {
    if probe_count == 0 {
        return Ok(0.0);
    }
    let rows = batch_rows(batch);
    let (_, grad) = batch_gradient(params, &rows, tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(probe_count);
    while probes.len() < probe_count.min(params.n_params()) {
        let i = rng.gen_range(0..params.n_params());
        if !probes.contains(&i) {
            probes.push(i);
        }
    }
    max_rel_error_against_fd(params, &rows, tau, &probes, &grad)
}

/// Fraction of validation pairs whose clean-to-augmented similarity exceeds
/// the mean similarity to the other pairs' augmented embeddings.
pub fn validation_similarity(
    params: &EncoderParams,
    songs: &[AudioBuffer],
    noise_pool: &[AudioBuffer],
    ir_pool: &[AudioBuffer],
    aug_cfg: &AugmentConfig,
    pipeline: Pipeline,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if songs.is_empty() || n_pairs == 0 {
        return Err(Error::InvalidArgument("need songs and pairs".into()));
    }
    let window = SAMPLE_RATE_HZ as usize;
    let pairs: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7A1, k as u64]));
            let song = &songs[rng.gen_range(0..songs.len())];
            let start = rng.gen_range(0..=song.len() - window);
            let fragment = AudioBuffer {
                samples: song.samples[start..start + window].to_vec(),
                sample_rate_hz: song.sample_rate_hz,
            };
            let distorted = pipeline.run(&fragment, noise_pool, ir_pool, aug_cfg, &mut rng)?;
            let zc = super::net::forward_f64(params, &mel_spectrogram(&fragment)?)?;
            let za = super::net::forward_f64(params, &mel_spectrogram(&distorted)?)?;
            Ok((zc, za))
        })
        .collect();
    let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut wins = 0usize;
    for i in 0..pairs.len() {
        let (zc, za) = &pairs[i];
        let pos: f64 = zc.iter().zip(za.iter()).map(|(a, b)| a * b).sum();
        let mut neg_sum = 0.0;
        let mut neg_count = 0usize;
        for (j, (_, za_j)) in pairs.iter().enumerate() {
            if j != i {
                neg_sum += zc.iter().zip(za_j.iter()).map(|(a, b)| a * b).sum::<f64>();
                neg_count += 1;
            }
        }
        if neg_count == 0 || pos > neg_sum / neg_count as f64 {
            wins += 1;
        }
    }
    Ok(wins as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentConfig;
    use crate::corpus::{synth_ir, synth_noise, synth_song, NoiseKind, SynthSongSpec};

    fn tiny_corpus(n: usize) -> Vec<AudioBuffer> {
        (0..n)
            .map(|i| {
                synth_song(&SynthSongSpec {
                    seed: 400 + i as u64,
                    duration_s: 6.0,
                    ..SynthSongSpec::default()
                })
                .unwrap()
            })
            .collect()
    }

    fn pools() -> (Vec<AudioBuffer>, Vec<AudioBuffer>) {
        (
            vec![synth_noise(NoiseKind::Broadband, 2.0, 1).unwrap()],
            vec![synth_ir(0.15, 2).unwrap()],
        )
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_pairs: 4,
            epochs: 2,
            batches_per_epoch: 2,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_rows_follow_positive_pair_layout() {
        let songs = tiny_corpus(6);
        let (noise, ir) = pools();
        let aug = AugmentConfig::default();
        let batch =
            assemble_batch(&songs, &noise, &ir, &aug, Pipeline::Proposed, 4, 77).unwrap();
        assert_eq!(batch.clean.len(), 4);
        assert_eq!(batch.augmented.len(), 4);
        // distinct songs
        let mut song_ids: Vec<usize> = batch.sources.iter().map(|(s, _)| *s).collect();
        song_ids.dedup();
        song_ids.sort_unstable();
        song_ids.dedup();
        assert_eq!(song_ids.len(), 4);

        // provenance: row N+k is the distortion of row k under the recorded seed
        for k in 0..4 {
            let (song_idx, start) = batch.sources[k];
            let fragment = AudioBuffer {
                samples: songs[song_idx].samples[start..start + 8000].to_vec(),
                sample_rate_hz: 8000,
            };
            assert_eq!(
                mel_spectrogram(&fragment).unwrap().values,
                batch.clean[k].values
            );
            let mut rng = ChaCha8Rng::seed_from_u64(batch.aug_seeds[k]);
            let replay = Pipeline::Proposed
                .run(&fragment, &noise, &ir, &aug, &mut rng)
                .unwrap();
            assert_eq!(
                mel_spectrogram(&replay).unwrap().values,
                batch.augmented[k].values
            );
        }
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let songs = tiny_corpus(6);
        let (noise, ir) = pools();
        let aug = AugmentConfig::default();
        let cfg = quick_cfg();
        let a = train(&songs, &noise, &ir, &aug, &EncoderConfig::desk(), &cfg).unwrap();
        let b = train(&songs, &noise, &ir, &aug, &EncoderConfig::desk(), &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params.theta, b.params.theta);
        assert_eq!(a.loss_history.len(), cfg.epochs);
    }

    #[test]
    fn zero_learning_rate_freezes_params_and_loss() {
        let songs = tiny_corpus(6);
        let (noise, ir) = pools();
        let aug = AugmentConfig::default();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            lr_floor: 0.0,
            epochs: 3,
            ..quick_cfg()
        };
        let init = EncoderParams::init(
            &EncoderConfig::desk(),
            mix_seed(&[cfg.seed, TAG_INIT]),
        )
        .unwrap();
        let out = train(&songs, &noise, &ir, &aug, &EncoderConfig::desk(), &cfg).unwrap();
        assert_eq!(out.params.theta, init.theta);
        for w in &out.loss_history[1..] {
            assert_eq!(*w, out.loss_history[0]);
        }
    }

    #[test]
    fn too_few_songs_rejected() {
        let songs = tiny_corpus(2);
        let (noise, ir) = pools();
        let cfg = quick_cfg(); // wants 4 distinct songs
        assert!(matches!(
            train(&songs, &noise, &ir, &AugmentConfig::default(), &EncoderConfig::desk(), &cfg),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let songs = tiny_corpus(4);
        let (noise, ir) = pools();
        let aug = AugmentConfig::default();
        let batch =
            assemble_batch(&songs, &noise, &ir, &aug, Pipeline::Proposed, 2, 5).unwrap();
        let params = EncoderParams::init(&EncoderConfig::desk(), 21).unwrap();
        let err = gradient_check(&params, &batch, 0.1, 24, 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let songs = tiny_corpus(4);
        let (noise, ir) = pools();
        let aug = AugmentConfig::default();
        let batch =
            assemble_batch(&songs, &noise, &ir, &aug, Pipeline::Proposed, 2, 6).unwrap();
        let params = EncoderParams::init(&EncoderConfig::desk(), 22).unwrap();
        let rows = batch_rows(&batch);
        let (_, mut grad) = batch_gradient(&params, &rows, 0.1).unwrap();
        for g in &mut grad {
            *g *= 2.0;
        }
        let probes: Vec<usize> = (0..12).map(|i| i * 977 + 13).collect();
        let err = max_rel_error_against_fd(&params, &rows, 0.1, &probes, &grad).unwrap();
        assert!((err - 1.0).abs() < 0.15, "fault shows error {err}");
    }

    #[test]
    fn zero_probes_pass_vacuously() {
        let songs = tiny_corpus(4);
        let (noise, ir) = pools();
        let batch = assemble_batch(
            &songs,
            &noise,
            &ir,
            &AugmentConfig::default(),
            Pipeline::Proposed,
            2,
            8,
        )
        .unwrap();
        let params = EncoderParams::init(&EncoderConfig::desk(), 23).unwrap();
        assert_eq!(gradient_check(&params, &batch, 0.1, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn validation_similarity_in_unit_range() {
        let songs = tiny_corpus(5);
        let (noise, ir) = pools();
        let params = EncoderParams::init(&EncoderConfig::desk(), 31).unwrap();
        let frac = validation_similarity(
            &params,
            &songs,
            &noise,
            &ir,
            &AugmentConfig::default(),
            Pipeline::Proposed,
            8,
            17,
        )
        .unwrap();
        assert!((0.0..=1.0).contains(&frac));
    }
}
