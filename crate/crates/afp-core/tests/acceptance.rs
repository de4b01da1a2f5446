//! Acceptance suite: every release criterion as one test, each printing a
//! PASS/FAIL line (visible under `--nocapture`). Heavy fixtures (trained
//! encoders, indexes, simulated recordings) are built once and shared.

use std::sync::OnceLock;
use std::time::Instant;

use rand::SeedableRng as _;

use afp_core::augment::{
    apply_filter, mix_at_snr, AugmentConfig, FilterKind, FilterSpec, Pipeline, ROLLOFFS_DB,
};
use afp_core::corpus::{synth_ir, synth_noise, synth_song, NoiseKind, SynthSongSpec};
use afp_core::dsp::{segment_song, AudioBuffer, SegmentRef};
use afp_core::encoder::{
    assemble_batch, batch_loss, gradient_check, pair_loss, train, validation_similarity,
    Embedding, EncoderConfig, EncoderParams, TrainConfig, TrainOutcome,
};
use afp_core::eval::{
    build_concert, build_peak_database, prepare_corpus, run_peak_snr_eval, run_proposed_eval,
    simulate_recording, DistortionLevel, EvalReport, Identifier, ProtocolRecording,
    CONCERT_TARGET_RMS,
};
use afp_core::peakfp::{fingerprint, PeakConfig, PeakIndex, PEAK_HOP};
use afp_core::pqindex::{train as train_pq, Codebooks, FingerprintIndex, IndexConfig};
use afp_core::retrieval::{
    identify_nprobe, judge_top1_nprobe, top1_hit_rate, EncoderEmbedder, HitJudgment,
};

const QUERIES_PER_CELL: usize = 200;

fn pass(criterion: usize, what: &str, detail: String) {
    println!("criterion {criterion:02}: PASS - {what} ({detail})");
}

fn check(criterion: usize, what: &str, ok: bool, detail: String) {
    if ok {
        pass(criterion, what, detail);
    } else {
        println!("criterion {criterion:02}: FAIL - {what} ({detail})");
        panic!("criterion {criterion:02} failed: {what}: {detail}");
    }
}

// ---------------------------------------------------------------- fixture

struct Rig {
    corpus: Vec<(u32, AudioBuffer)>,
    train_songs: Vec<AudioBuffer>,
    val_songs: Vec<AudioBuffer>,
    noise_train: Vec<AudioBuffer>,
    noise_test: Vec<AudioBuffer>,
    ir_train: Vec<AudioBuffer>,
    aug: AugmentConfig,
    star: TrainOutcome,
    base: TrainOutcome,
    index_star: FingerprintIndex,
    index_base: FingerprintIndex,
    peak_index: PeakIndex,
    peak_cfg: PeakConfig,
    concert: ProtocolRecording,
    sims: Vec<ProtocolRecording>, // low, mid, high
    /// criterion-8 report for the proposed-augmentation encoder
    report_star: EvalReport,
}

fn train_cfg(pipeline: Pipeline) -> TrainConfig {
    TrainConfig {
        batch_pairs: 16,
        temperature: 0.05,
        epochs: 20,
        learning_rate: 3e-3,
        lr_floor: 1e-7,
        momentum: 0.9,
        batches_per_epoch: 48,
        seed: 77,
        pipeline,
    }
}

fn rig() -> &'static Rig {
    static RIG: OnceLock<Rig> = OnceLock::new();
    RIG.get_or_init(|| {
        let t0 = Instant::now();
        eprintln!("[rig] synthesizing 100-song corpus");
        let songs: Vec<AudioBuffer> = (0..100)
            .map(|i| {
                synth_song(&SynthSongSpec {
                    seed: 9000 + i,
                    duration_s: 30.0,
                    ..SynthSongSpec::default()
                })
                .unwrap()
            })
            .collect();
        let corpus = prepare_corpus(&songs, CONCERT_TARGET_RMS).unwrap();
        // concert songs (0..15) stay out of training; 50 training songs
        let train_songs: Vec<AudioBuffer> =
            corpus[15..65].iter().map(|(_, a)| a.clone()).collect();
        let val_songs: Vec<AudioBuffer> = corpus[65..85].iter().map(|(_, a)| a.clone()).collect();

        let noise_train: Vec<AudioBuffer> = NoiseKind::ALL
            .iter()
            .flat_map(|k| (0..3u64).map(move |j| synth_noise(*k, 20.0, 100 + j).unwrap()))
            .collect();
        let noise_test: Vec<AudioBuffer> = NoiseKind::ALL
            .iter()
            .flat_map(|k| (0..2u64).map(move |j| synth_noise(*k, 20.0, 900 + j).unwrap()))
            .collect();
        // the capture simulation plays cafe ambience: chatter over an
        // equal-power broadband floor, so no band is noise-free
        let sim_noise: Vec<AudioBuffer> = (0..2u64)
            .map(|j| {
                let babble = synth_noise(NoiseKind::BabbleLike, 20.0, 900 + j).unwrap();
                let broad = synth_noise(NoiseKind::Broadband, 20.0, 920 + j).unwrap();
                let mut mix_rng = rand_chacha::ChaCha8Rng::seed_from_u64(940 + j);
                let mixed =
                    afp_core::augment::mix_at_snr(&babble, &broad, 0.0, &mut mix_rng).unwrap();
                afp_core::dsp::normalize_rms(&mixed, 0.1).unwrap()
            })
            .collect();
        let ir_train = vec![
            synth_ir(0.12, 40).unwrap(),
            synth_ir(0.2, 41).unwrap(),
            synth_ir(0.3, 42).unwrap(),
        ];
        let ir_eval = vec![synth_ir(0.25, 50).unwrap()];
        let aug = AugmentConfig::default();

        eprintln!("[rig] training proposed-augmentation encoder ({:?})", t0.elapsed());
        let star = train(
            &train_songs,
            &noise_train,
            &ir_train,
            &aug,
            &EncoderConfig::desk(),
            &train_cfg(Pipeline::Proposed),
        )
        .unwrap();
        eprintln!("[rig] training baseline-augmentation encoder ({:?})", t0.elapsed());
        let base = train(
            &train_songs,
            &noise_train,
            &ir_train,
            &aug,
            &EncoderConfig::desk(),
            &train_cfg(Pipeline::Baseline),
        )
        .unwrap();

        eprintln!("[rig] building embedding databases ({:?})", t0.elapsed());
        let index_cfg = IndexConfig::desk(64);
        let embedder_star = EncoderEmbedder { params: &star.params };
        let index_star =
            afp_core::eval::build_embedding_database(&corpus, &embedder_star, &index_cfg).unwrap();
        let embedder_base = EncoderEmbedder { params: &base.params };
        let index_base =
            afp_core::eval::build_embedding_database(&corpus, &embedder_base, &index_cfg).unwrap();

        eprintln!("[rig] building peak database ({:?})", t0.elapsed());
        let peak_cfg = PeakConfig::default();
        let peak_index = build_peak_database(&corpus, &peak_cfg).unwrap();

        eprintln!("[rig] building concert and simulations ({:?})", t0.elapsed());
        let concert_songs: Vec<(u32, AudioBuffer)> = corpus[..15].to_vec();
        let concert = build_concert(&concert_songs).unwrap();
        let sims: Vec<ProtocolRecording> = DistortionLevel::ALL
            .iter()
            .map(|l| simulate_recording(&concert, *l, &sim_noise, &ir_eval, 5).unwrap())
            .collect();

        eprintln!("[rig] running retrieval trend evaluation ({:?})", t0.elapsed());
        let mut report_star = EvalReport::new(serde_json::json!({
            "fixture": "acceptance", "encoder": "proposed-aug", "seed": 5,
        }));
        // clean rows at exhaustive fidelity, distorted rows at desk nprobe
        let clean_identifier = Identifier::Embedding {
            index: &index_star,
            embedder: &embedder_star,
            top_k: 4,
            nprobe: index_cfg.coarse_cells,
        };
        run_proposed_eval(
            &concert,
            &clean_identifier,
            "star",
            &afp_core::eval::QUERY_LENS_S,
            QUERIES_PER_CELL,
            5,
            &mut report_star,
        )
        .unwrap();
        let identifier = Identifier::Embedding {
            index: &index_star,
            embedder: &embedder_star,
            top_k: 4,
            nprobe: index_cfg.nprobe,
        };
        for sim in &sims {
            run_proposed_eval(
                sim,
                &identifier,
                "star",
                &afp_core::eval::QUERY_LENS_S,
                QUERIES_PER_CELL,
                5,
                &mut report_star,
            )
            .unwrap();
        }
        eprintln!("[rig] ready in {:?}", t0.elapsed());

        Rig {
            corpus,
            train_songs,
            val_songs,
            noise_train,
            noise_test,
            ir_train,
            aug,
            star,
            base,
            index_star,
            index_base,
            peak_index,
            peak_cfg,
            concert,
            sims,
            report_star,
        }
    })
}

fn unit_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- criteria

#[test]
fn acceptance_01_contrastive_loss_exactness() {
    let t0 = Instant::now();
    // N = 1: the denominator holds exactly the positive term
    let z2 = unit_rows(vec![vec![0.2, 0.5, -0.3], vec![-0.6, 0.1, 0.4]]);
    let n1 = batch_loss(&z2, 0.07).unwrap();

    // 2N = 4 identical rows: every directed pair sees a uniform softmax
    let row = vec![0.5f64.sqrt(), 0.5f64.sqrt(), 0.0];
    let z4 = vec![row.clone(), row.clone(), row.clone(), row];
    let uniform = batch_loss(&z4, 1.0).unwrap();

    // hand-computed scalar case: positive similarity 1, two negatives at 0
    let z = vec![
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
    ];
    let scalar = pair_loss(0, 2, &z, 1.0).unwrap();
    let e = std::f64::consts::E;
    let expected = -(e / (e + 2.0)).ln();

    check(
        1,
        "contrastive loss exactness",
        n1.abs() < 1e-9
            && (uniform - 3.0f64.ln()).abs() < 1e-9
            && (scalar - expected).abs() < 1e-9,
        format!(
            "N=1 loss {n1:.2e}, uniform {uniform:.10} vs ln3, scalar {scalar:.10} vs {expected:.10}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_02_gradient_correctness() {
    let t0 = Instant::now();
    let rig = rig();
    let params = EncoderParams::init(&EncoderConfig::desk(), 123).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let batch = assemble_batch(
            &rig.train_songs,
            &rig.noise_train,
            &rig.ir_train,
            &rig.aug,
            Pipeline::Proposed,
            2,
            1000 + seed,
        )
        .unwrap();
        let err = gradient_check(&params, &batch, 0.05, 15, seed).unwrap();
        worst = worst.max(err);
    }

    // injected fault: a doubled gradient must be flagged
    let batch = assemble_batch(
        &rig.train_songs,
        &rig.noise_train,
        &rig.ir_train,
        &rig.aug,
        Pipeline::Proposed,
        2,
        2000,
    )
    .unwrap();
    let fault = {
        use afp_core::encoder::{batch_parameter_gradient, max_rel_error_against_fd};
        let rows: Vec<&afp_core::dsp::Spectrogram> =
            batch.clean.iter().chain(batch.augmented.iter()).collect();
        let (_, mut pgrad) = batch_parameter_gradient(&params, &rows, 0.05).unwrap();
        for g in &mut pgrad {
            *g *= 2.0;
        }
        let probes: Vec<usize> = (0..10).map(|i| i * 971 + 17).collect();
        max_rel_error_against_fd(&params, &rows, 0.05, &probes, &pgrad).unwrap()
    };

    check(
        2,
        "gradient correctness",
        worst < 1e-4 && (fault - 1.0).abs() < 0.2,
        format!(
            "max relative error {worst:.2e} over 5 batches; 2x fault reads {fault:.3}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_03_training_sanity() {
    let t0 = Instant::now();
    let rig = rig();
    let history = &rig.star.loss_history;
    let first = history[0];
    let last = history[history.len() - 1];
    let frac = validation_similarity(
        &rig.star.params,
        &rig.val_songs,
        &rig.noise_train,
        &rig.ir_train,
        &rig.aug,
        Pipeline::Proposed,
        64,
        4242,
    )
    .unwrap();
    check(
        3,
        "training sanity",
        last < first && frac >= 0.9,
        format!(
            "probe loss epoch1 {first:.4} -> epoch20 {last:.4}; positive>mean-negative for {:.1}% of validation pairs, {:?}",
            frac * 100.0,
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_04_segment_arithmetic() {
    let audio = AudioBuffer::new(vec![0.05; 180 * 8000], 8000).unwrap();
    let segments = segment_song(&audio).unwrap();
    check(
        4,
        "segment arithmetic",
        segments.len() == 359,
        format!("180 s song yields {} segments", segments.len()),
    );
}

#[test]
fn acceptance_05_pq_oracle_equivalence() {
    use rand::Rng;
    use rand::SeedableRng;
    let t0 = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let dim = 64;

    // clustered synthetic vectors: 40 centers, sphere-normalized
    let centers: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let draw = |spread: f64, rng: &mut rand_chacha::ChaCha8Rng, center: &[f64]| {
        let v: Vec<f64> = center
            .iter()
            .map(|c| c + spread * rng.gen_range(-1.0f64..1.0))
            .collect();
        Embedding::from_f64_normalized(&v).unwrap()
    };
    let sample: Vec<Embedding> = (0..5000)
        .map(|i| {
            let c = centers[i % centers.len()].clone();
            draw(0.15, &mut rng, &c)
        })
        .collect();
    let db: Vec<Embedding> = sample[..1000].to_vec();
    let queries: Vec<Embedding> = (0..200)
        .map(|i| {
            let base: Vec<f64> = db[i * 5].values().iter().map(|v| *v as f64).collect();
            draw(0.05, &mut rng, &base)
        })
        .collect();

    let exact_nn = |q: &Embedding| -> SegmentRef {
        let mut best = (f64::INFINITY, SegmentRef::new(0, 0));
        for (i, e) in db.iter().enumerate() {
            let d: f64 = q
                .values()
                .iter()
                .zip(e.values())
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            let r = SegmentRef::new(i as u32, 0);
            if d < best.0 || (d == best.0 && r < best.1) {
                best = (d, r);
            }
        }
        best.1
    };
    let truth: Vec<SegmentRef> = queries.iter().map(exact_nn).collect();

    let mut recalls = Vec::new();
    let mut mses = Vec::new();
    for m in [4usize, 8, 16, 32] {
        let config = IndexConfig {
            dim,
            subquantizers: m,
            code_bits: 8,
            coarse_cells: 16,
            nprobe: 16,
            seed: 7,
        };
        let books = train_pq(&sample, &config).unwrap();
        let mut index = FingerprintIndex::new(config, books).unwrap();
        for (i, e) in db.iter().enumerate() {
            index.add(SegmentRef::new(i as u32, 0), e).unwrap();
        }
        index.freeze();

        let hits = queries
            .iter()
            .zip(&truth)
            .filter(|(q, t)| {
                index.search_nprobe(q, 1, 16).unwrap()[0].segment == **t
            })
            .count();
        recalls.push(hits as f64 / queries.len() as f64);

        let mse: f64 = db
            .iter()
            .map(|e| {
                let (cell, code) = index.encode(e);
                let recon = index.decode(cell, &code);
                e.values()
                    .iter()
                    .zip(&recon)
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / db.len() as f64;
        mses.push(mse);
    }

    let recall_monotone = recalls.windows(2).all(|w| w[1] >= w[0]);
    let mse_decreasing = mses.windows(2).all(|w| w[1] < w[0]);

    // zero-residual fixed point: ADC distance exactly zero
    let config = IndexConfig {
        dim: 4,
        subquantizers: 2,
        code_bits: 4,
        coarse_cells: 2,
        nprobe: 2,
        seed: 0,
    };
    let mut sub = vec![vec![vec![0.25f32, -0.5]; 16]; 2];
    sub[0][5] = vec![0.0, 0.0];
    sub[1][9] = vec![0.0, 0.0];
    let books = Codebooks {
        coarse: vec![vec![0.6, 0.0, 0.0, 0.8], vec![-0.6, 0.0, 0.0, -0.8]],
        sub,
    };
    let mut fixed = FingerprintIndex::new(config, books).unwrap();
    let target = Embedding::new(vec![0.6, 0.0, 0.0, 0.8]).unwrap();
    fixed.add(SegmentRef::new(3, 1), &target).unwrap();
    fixed.freeze();
    let hit = &fixed.search_nprobe(&target, 1, 2).unwrap()[0];
    let zero_residual = hit.segment == SegmentRef::new(3, 1) && hit.distance == 0.0;

    check(
        5,
        "pq oracle equivalence",
        recalls[3] >= 0.9 && recall_monotone && mse_decreasing && zero_residual,
        format!(
            "recall@1 {recalls:?}, reconstruction mse {mses:?}, zero-residual dist {}, {:?}",
            hit.distance,
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_06_code_length_accounting() {
    let t0 = Instant::now();
    let rig = rig();
    let (code_bytes, serialized) = rig.index_star.size_report();
    let expected_codes =
        rig.index_star.len() * rig.index_star.config.subquantizers as u64
            * rig.index_star.config.code_bits as u64
            / 8;
    let expected_file = rig.index_star.expected_serialized_bytes();

    // bit-exact round trip through disk
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.afpi");
    rig.index_star.save(&path).unwrap();
    let on_disk = std::fs::metadata(&path).unwrap().len();

    // the reported database shape: 58,879,329 vectors of 32 one-byte codes
    let vectors: u64 = 58_879_329;
    let code_gb = (vectors * 32) as f64 / 1e9;
    let table_total_gb = 2.2;

    check(
        6,
        "code-length accounting",
        code_bytes == expected_codes
            && serialized == expected_file
            && on_disk == expected_file
            && (code_gb - 1.88).abs() < 0.01
            && code_gb < table_total_gb,
        format!(
            "codes {code_bytes} B, file {serialized} B (= formula {expected_file}, disk {on_disk}); \
             58,879,329 x 32 B = {code_gb:.3} GB < {table_total_gb} GB, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_07_filter_and_snr_contract() {
    use rand::Rng;
    use rand::SeedableRng;
    let t0 = Instant::now();

    // independent spectrum measurement
    fn band_db(audio: &AudioBuffer, f_lo: f64, f_hi: f64) -> f64 {
        use rustfft::num_complex::Complex64;
        let n = audio.len().next_power_of_two();
        let mut buf: Vec<Complex64> = audio
            .samples
            .iter()
            .map(|x| Complex64::new(*x, 0.0))
            .chain(std::iter::repeat(Complex64::default()))
            .take(n)
            .collect();
        rustfft::FftPlanner::new()
            .plan_fft_forward(n)
            .process(&mut buf);
        let hz_per_bin = 8000.0 / n as f64;
        let lo = (f_lo / hz_per_bin).round() as usize;
        let hi = ((f_hi / hz_per_bin).round() as usize).min(n / 2);
        let p: f64 =
            buf[lo..=hi].iter().map(|c| c.norm_sqr()).sum::<f64>() / (hi - lo + 1) as f64;
        10.0 * p.log10()
    }

    let mut all_ok = true;
    let mut details = Vec::new();
    for rolloff in ROLLOFFS_DB {
        for kind in [FilterKind::LowPass, FilterKind::HighPass] {
            let (cutoff, measure_band) = match kind {
                FilterKind::LowPass => (2000.0 + 1e-9, (3950.0, 4000.0)),
                FilterKind::HighPass => (800.0, (390.0, 410.0)),
            };
            let mut acc = 0.0;
            for trial in 0..50u64 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5000 + trial);
                let noise = AudioBuffer::new(
                    (0..8192).map(|_| rng.gen_range(-0.3..0.3)).collect(),
                    8000,
                )
                .unwrap();
                let spec = FilterSpec {
                    kind,
                    cutoff_hz: cutoff,
                    rolloff_db: rolloff,
                };
                let out = apply_filter(&noise, &spec).unwrap();
                acc += band_db(&noise, measure_band.0, measure_band.1)
                    - band_db(&out, measure_band.0, measure_band.1);
            }
            let atten = acc / 50.0;
            let ok = (atten - rolloff as f64).abs() <= 1.5;
            all_ok &= ok;
            details.push(format!("{kind:?}/{rolloff}: {atten:.2} dB"));
        }
    }

    // SNR mixer within 0.1 dB across random draws
    let mut worst_snr_err = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let signal = AudioBuffer::new(
            (0..8000).map(|_| rng.gen_range(-0.4f64..0.4)).collect(),
            8000,
        )
        .unwrap();
        let noise = AudioBuffer::new(
            (0..12000).map(|_| rng.gen_range(-0.4f64..0.4)).collect(),
            8000,
        )
        .unwrap();
        let target = rng.gen_range(-5.0..25.0);
        let mixed = mix_at_snr(&signal, &noise, target, &mut rng).unwrap();
        let p_sig: f64 = signal.samples.iter().map(|s| s * s).sum();
        let p_noise: f64 = mixed
            .samples
            .iter()
            .zip(&signal.samples)
            .map(|(m, s)| (m - s) * (m - s))
            .sum();
        worst_snr_err = worst_snr_err.max((10.0 * (p_sig / p_noise).log10() - target).abs());
    }

    check(
        7,
        "filter and snr contract",
        all_ok && worst_snr_err < 0.1,
        format!(
            "attenuation at one octave: [{}]; worst SNR error {worst_snr_err:.4} dB, {:?}",
            details.join(", "),
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_08_retrieval_trends() {
    let t0 = Instant::now();
    let rig = rig();
    let report = &rig.report_star;

    let clean_10 = report.value_of("proposed", "clean", 10.0).unwrap();

    // low >= mid >= high at every length >= 5 s
    let mut ordering_ok = true;
    for len in [5.0, 10.0, 15.0] {
        let low = report.value_of("proposed", "low", len).unwrap();
        let mid = report.value_of("proposed", "mid", len).unwrap();
        let high = report.value_of("proposed", "high", len).unwrap();
        ordering_ok &= low >= mid && mid >= high;
    }

    // non-decreasing in length within a 2-point tolerance per step
    let mut length_ok = true;
    for level in ["clean", "low", "mid", "high"] {
        let values: Vec<f64> = afp_core::eval::QUERY_LENS_S
            .iter()
            .map(|l| report.value_of("proposed", level, *l).unwrap())
            .collect();
        for w in values.windows(2) {
            length_ok &= w[1] >= w[0] - 2.0;
        }
    }

    let summary: Vec<String> = ["clean", "low", "mid", "high"]
        .iter()
        .map(|level| {
            let vals: Vec<String> = afp_core::eval::QUERY_LENS_S
                .iter()
                .map(|l| format!("{:.0}", report.value_of("proposed", level, *l).unwrap()))
                .collect();
            format!("{level}: [{}]", vals.join(" "))
        })
        .collect();

    check(
        8,
        "retrieval trends",
        clean_10 == 100.0 && ordering_ok && length_ok,
        format!(
            "clean@10s {clean_10}; accuracy by level {}; {} queries/cell, {:?}",
            summary.join("; "),
            QUERIES_PER_CELL,
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_09_augmentation_ablation() {
    let t0 = Instant::now();
    let rig = rig();
    let high = &rig.sims[2];
    assert_eq!(high.level, Some(DistortionLevel::High));

    let embedder = EncoderEmbedder { params: &rig.base.params };
    let identifier = Identifier::Embedding {
        index: &rig.index_base,
        embedder: &embedder,
        top_k: 4,
        nprobe: rig.index_base.config.nprobe,
    };
    let mut report_base = EvalReport::new(serde_json::json!({"encoder": "baseline-aug"}));
    run_proposed_eval(
        high,
        &identifier,
        "base",
        &[5.0, 10.0],
        QUERIES_PER_CELL,
        5,
        &mut report_base,
    )
    .unwrap();

    let star5 = rig.report_star.value_of("proposed", "high", 5.0).unwrap();
    let star10 = rig.report_star.value_of("proposed", "high", 10.0).unwrap();
    let base5 = report_base.value_of("proposed", "high", 5.0).unwrap();
    let base10 = report_base.value_of("proposed", "high", 10.0).unwrap();

    check(
        9,
        "augmentation ablation",
        star5 > base5 && star10 > base10,
        format!(
            "high.wav accuracy, proposed vs baseline augmentation: 5 s {star5:.1} vs {base5:.1}; \
             10 s {star10:.1} vs {base10:.1}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_10_peak_baseline() {
    use rand::Rng;
    let t0 = Instant::now();
    let rig = rig();

    // clean self-match with correct offsets, excerpts on the hop grid
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(808);
    let mut self_ok = 0usize;
    let trials = 50usize;
    for _ in 0..trials {
        let (song_id, audio) = &rig.corpus[rng.gen_range(0..rig.corpus.len())];
        let max_start = (audio.len() - 5 * 8000) / PEAK_HOP;
        let start_frame = rng.gen_range(0..=max_start);
        let start = start_frame * PEAK_HOP;
        let excerpt = AudioBuffer::new(audio.samples[start..start + 5 * 8000].to_vec(), 8000).unwrap();
        let results = rig.peak_index.match_query(&fingerprint(&excerpt, &rig.peak_cfg));
        if let Some(top) = results.first() {
            if top.song_id == *song_id && top.best_offset == start_frame as i64 {
                self_ok += 1;
            }
        }
    }
    let self_rate = 100.0 * self_ok as f64 / trials as f64;

    // 10 dB SNR, 10 s queries: song accuracy on the desk corpus
    let mut report = EvalReport::new(serde_json::json!({"peak": true}));
    run_peak_snr_eval(
        &rig.corpus,
        &rig.peak_index,
        &rig.peak_cfg,
        "peak",
        &[10.0],
        &[10.0],
        &rig.noise_test,
        QUERIES_PER_CELL,
        909,
        &mut report,
    )
    .unwrap();
    let snr10 = report.rows[0].value;

    // short noisy queries: peak vs learned at 2 s on the simulated capture
    let peak_identifier = Identifier::Peak {
        index: &rig.peak_index,
        cfg: &rig.peak_cfg,
    };
    let mut peak_sim = EvalReport::new(serde_json::json!({"peak": "sim"}));
    for sim in &rig.sims {
        run_proposed_eval(
            sim,
            &peak_identifier,
            "peak",
            &[2.0],
            QUERIES_PER_CELL,
            5,
            &mut peak_sim,
        )
        .unwrap();
    }
    let peak_high_2s = peak_sim.value_of("proposed", "high", 2.0).unwrap();
    let learned_high_2s = rig.report_star.value_of("proposed", "high", 2.0).unwrap();
    let peak_low_2s = peak_sim.value_of("proposed", "low", 2.0).unwrap();
    let learned_low_2s = rig.report_star.value_of("proposed", "low", 2.0).unwrap();

    check(
        10,
        "peak baseline",
        self_rate == 100.0 && snr10 >= 80.0 && peak_low_2s < learned_low_2s,
        format!(
            "self-match {self_rate:.0}%; 10 dB/10 s accuracy {snr10:.1}%; 2 s simulated capture: \
             peak {peak_low_2s:.1}% vs learned {learned_low_2s:.1}% (low), \
             peak {peak_high_2s:.1}% vs learned {learned_high_2s:.1}% (high), {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_11_metric_exactness() {
    let t0 = Instant::now();
    let rig = rig();
    let j = |hit: bool| HitJudgment {
        hit,
        predicted: SegmentRef::new(0, 0),
        truth_song: 0,
        truth_start_s: 0.0,
    };
    let rate = top1_hit_rate(&[j(true), j(true), j(true), j(false)]).unwrap();

    // boundary rule on the live index: ±500 ms inclusive, 1 s out misses
    let embedder = EncoderEmbedder { params: &rig.star.params };
    let (song_id, audio) = &rig.corpus[20];
    let segment = AudioBuffer::new(audio.samples[4 * 8000..5 * 8000].to_vec(), 8000).unwrap();
    let nprobe = rig.index_star.config.coarse_cells;
    let exact = judge_top1_nprobe(&segment, &rig.index_star, &embedder, *song_id, 4.0, nprobe)
        .unwrap();
    let boundary = judge_top1_nprobe(&segment, &rig.index_star, &embedder, *song_id, 4.5, nprobe)
        .unwrap();
    let outside = judge_top1_nprobe(&segment, &rig.index_star, &embedder, *song_id, 5.0, nprobe)
        .unwrap();

    check(
        11,
        "metric exactness",
        rate == 75.0 && exact.hit && boundary.hit && !outside.hit,
        format!(
            "3 hits / 1 miss -> {rate}; boundary at 0.5 s hits, 1.0 s misses \
             (predicted segment {} of song {}), {:?}",
            exact.predicted.segment_index,
            exact.predicted.song_id,
            t0.elapsed()
        ),
    );
}

#[test]
fn acceptance_12_determinism() {
    let t0 = Instant::now();
    let rig = rig();
    let embedder = EncoderEmbedder { params: &rig.star.params };

    let run_once = || {
        let identifier = Identifier::Embedding {
            index: &rig.index_star,
            embedder: &embedder,
            top_k: 4,
            nprobe: rig.index_star.config.nprobe,
        };
        let mut report = EvalReport::new(serde_json::json!({"determinism": true}));
        run_proposed_eval(&rig.sims[1], &identifier, "star", &[2.0, 5.0], 30, 99, &mut report)
            .unwrap();
        run_proposed_eval(&rig.concert, &identifier, "star", &[3.0], 30, 99, &mut report).unwrap();
        (
            report.to_csv(),
            serde_json::to_string(&report.rows).unwrap(),
        )
    };
    let (csv_a, json_a) = run_once();
    let (csv_b, json_b) = run_once();

    // a repeated query returns byte-identical JSON too
    let query = AudioBuffer::new(
        rig.corpus[7].1.samples[3 * 8000..8 * 8000].to_vec(),
        8000,
    )
    .unwrap();
    let qa = identify_nprobe(&query, &rig.index_star, &embedder, 4, 4).unwrap();
    let qb = identify_nprobe(&query, &rig.index_star, &embedder, 4, 4).unwrap();
    let qjson_a = serde_json::to_string(&qa).unwrap();
    let qjson_b = serde_json::to_string(&qb).unwrap();

    check(
        12,
        "determinism",
        csv_a == csv_b && json_a == json_b && qjson_a == qjson_b,
        format!(
            "report csv {} B and query json {} B byte-identical across reruns, {:?}",
            csv_a.len(),
            qjson_a.len(),
            t0.elapsed()
        ),
    );
}
