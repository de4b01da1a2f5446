//! Run configuration: a JSON file with per-stage sections, every field
//! defaulted, individual values overridable by command-line flags.

use std::path::Path;

use afp_core::augment::AugmentConfig;
use afp_core::encoder::{EncoderConfig, TrainConfig};
use afp_core::peakfp::PeakConfig;
use afp_core::pqindex::IndexConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub songs: usize,
    pub song_duration_s: f64,
    pub song_seed: u64,
    pub noise_duration_s: f64,
    pub noise_seed: u64,
    pub irs: usize,
    pub ir_seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            songs: 100,
            song_duration_s: 30.0,
            song_seed: 1000,
            noise_duration_s: 30.0,
            noise_seed: 2000,
            irs: 5,
            ir_seed: 3000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub query_lens_s: Vec<f64>,
    pub queries_per_len: usize,
    pub snr_levels_db: Vec<f64>,
    pub levels: Vec<String>,
    pub concert_songs: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            query_lens_s: vec![1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 15.0],
            queries_per_len: 200,
            snr_levels_db: vec![0.0, 5.0, 10.0, 15.0],
            levels: vec!["low".into(), "mid".into(), "high".into()],
            concert_songs: 15,
            top_k: 4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub index: IndexConfigSection,
    pub peaks: PeakConfig,
    pub eval: EvalSection,
}

/// IndexConfig with a default tied to the encoder's embedding dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfigSection {
    pub dim: usize,
    pub subquantizers: usize,
    pub code_bits: u32,
    pub coarse_cells: usize,
    pub nprobe: usize,
    pub seed: u64,
}

impl Default for IndexConfigSection {
    fn default() -> Self {
        IndexConfigSection {
            dim: 64,
            subquantizers: 32,
            code_bits: 8,
            coarse_cells: 64,
            nprobe: 4,
            seed: 0,
        }
    }
}

impl From<IndexConfigSection> for IndexConfig {
    fn from(s: IndexConfigSection) -> IndexConfig {
        IndexConfig {
            dim: s.dim,
            subquantizers: s.subquantizers,
            code_bits: s.code_bits,
            coarse_cells: s.coarse_cells,
            nprobe: s.nprobe,
            seed: s.seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn snapshot_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Persist the effective config into the run directory.
    pub fn snapshot_to(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}
