//! Product-quantized inverted-file index: k-means codebooks, a coarse
//! quantizer partitioning the database into K cells, residual encoding to
//! m sub-indices, and asymmetric-distance search over the nprobe nearest
//! cells.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsp::SegmentRef;
use crate::encoder::Embedding;
use crate::{Error, Result};

const INDEX_MAGIC: &[u8; 4] = b"AFPI";
const INDEX_VERSION: u16 = 1;
const KMEANS_ITERS: usize = 25;
const TRAIN_SAMPLE_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IndexConfig {
    /// Embedding dimension D.
    pub dim: usize,
    /// Number of subquantizers m; must divide D.
    pub subquantizers: usize,
    /// Bits per sub-code; k* = 2^code_bits centroids per subspace.
    pub code_bits: u32,
    /// Coarse cells K.
    pub coarse_cells: usize,
    /// Cells visited per query.
    pub nprobe: usize,
    pub seed: u64,
}

impl IndexConfig {
    /// Desk defaults: K = 64, nprobe = 4, m = 32, 8-bit codes.
    pub fn desk(dim: usize) -> Self {
        IndexConfig {
            dim,
            subquantizers: 32,
            code_bits: 8,
            coarse_cells: 64,
            nprobe: 4,
            seed: 0,
        }
    }

    /// Paper-scale shape: K = 256 coarse cells over 128-d embeddings.
    pub fn full_scale() -> Self {
        IndexConfig {
            dim: 128,
            subquantizers: 32,
            code_bits: 8,
            coarse_cells: 256,
            nprobe: 4,
            seed: 0,
        }
    }

    pub fn sub_centroids(&self) -> usize {
        1usize << self.code_bits
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.subquantizers
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.subquantizers == 0 || self.dim % self.subquantizers != 0 {
            return Err(Error::InvalidArgument(format!(
                "subquantizers {} must divide dim {}",
                self.subquantizers, self.dim
            )));
        }
        if !(4..=8).contains(&self.code_bits) {
            return Err(Error::InvalidArgument(format!(
                "code_bits must lie in [4, 8], got {}",
                self.code_bits
            )));
        }
        if self.coarse_cells == 0 || self.nprobe == 0 || self.nprobe > self.coarse_cells {
            return Err(Error::InvalidArgument(format!(
                "need 0 < nprobe <= K, got nprobe {} K {}",
                self.nprobe, self.coarse_cells
            )));
        }
        Ok(())
    }
}

/// Coarse and per-subspace centroid tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    /// K x D.
    pub coarse: Vec<Vec<f32>>,
    /// m tables of k* x (D/m).
    pub sub: Vec<Vec<Vec<f32>>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeding. Within-cluster distortion is
/// non-increasing across iterations (asserted); empty clusters are repaired
/// by splitting the largest cluster at its farthest member.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut dist2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining points coincide with chosen centroids
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in dist2.iter_mut().zip(points) {
            let nd = sq_dist(p, centroids.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }

    let mut assignment = vec![0usize; points.len()];
    let mut prev_distortion = f64::INFINITY;
    for _ in 0..iters {
        // assignment step
        let assigned: Vec<(usize, f64)> =
            points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut distortion = 0.0;
        for (i, (cell, d)) in assigned.iter().enumerate() {
            assignment[i] = *cell;
            distortion += d;
        }
        assert!(
            distortion <= prev_distortion * (1.0 + 1e-9) + 1e-12,
            "k-means distortion increased: {prev_distortion} -> {distortion}"
        );
        prev_distortion = distortion;

        // update step
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &cell) in points.iter().zip(&assignment) {
            counts[cell] += 1;
            for (s, v) in sums[cell].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            }
        }
        // empty-cluster repair: move each empty centroid onto the farthest
        // member of the currently largest cluster
        let empties: Vec<usize> = (0..k).filter(|c| counts[*c] == 0).collect();
        for empty in empties {
            let largest = (0..k)
                .max_by_key(|c| counts[*c])
                .expect("at least one cluster");
            if counts[largest] < 2 {
                break;
            }
            let (far_idx, _) = points
                .iter()
                .enumerate()
                .filter(|(i, _)| assignment[*i] == largest)
                .map(|(i, p)| (i, sq_dist(p, &centroids[largest])))
                .fold((usize::MAX, -1.0), |acc, (i, d)| {
                    if d > acc.1 {
                        (i, d)
                    } else {
                        acc
                    }
                });
            centroids[empty] = points[far_idx].clone();
            assignment[far_idx] = empty;
            counts[largest] -= 1;
            counts[empty] += 1;
        }
    }
    Ok(centroids)
}

/// Learn the coarse quantizer on raw vectors and the sub-codebooks on
/// residuals split into m subspaces.
pub fn train(embeddings: &[Embedding], config: &IndexConfig) -> Result<Codebooks> {
    config.validate()?;
    let needed = config.coarse_cells.max(config.sub_centroids()) * 4;
    if embeddings.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: embeddings.len(),
        });
    }
    if embeddings.iter().any(|e| e.dim() != config.dim) {
        return Err(Error::InvalidArgument("embedding dimension mismatch".into()));
    }

    // seeded uniform subsample cap to bound training time
    let mut sample: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.values().iter().map(|v| *v as f64).collect())
        .collect();
    if sample.len() > TRAIN_SAMPLE_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ca1e);
        for i in (1..sample.len()).rev() {
            sample.swap(i, rng.gen_range(0..=i));
        }
        sample.truncate(TRAIN_SAMPLE_CAP);
    }

    let coarse = kmeans(&sample, config.coarse_cells, KMEANS_ITERS, config.seed)?;

    let residuals: Vec<Vec<f64>> = sample
        .par_iter()
        .map(|p| {
            let (cell, _) = nearest(p, &coarse);
            p.iter().zip(&coarse[cell]).map(|(x, c)| x - c).collect()
        })
        .collect();

    let sub_dim = config.sub_dim();
    let mut sub = Vec::with_capacity(config.subquantizers);
    for j in 0..config.subquantizers {
        let slice: Vec<Vec<f64>> = residuals
            .iter()
            .map(|r| r[j * sub_dim..(j + 1) * sub_dim].to_vec())
            .collect();
        let centroids = kmeans(
            &slice,
            config.sub_centroids(),
            KMEANS_ITERS,
            config.seed ^ (j as u64 + 1).wrapping_mul(0x9E37_79B9),
        )?;
        sub.push(
            centroids
                .into_iter()
                .map(|c| c.into_iter().map(|v| v as f32).collect())
                .collect(),
        );
    }

    Ok(Codebooks {
        coarse: coarse
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f32).collect())
            .collect(),
        sub,
    })
}

/// One stored fingerprint: its segment plus the m-byte code.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub segment: SegmentRef,
    pub code: Vec<u8>,
}

/// The searchable database.
#[derive(Debug, Clone)]
pub struct FingerprintIndex {
    pub config: IndexConfig,
    pub codebooks: Codebooks,
    cells: Vec<Vec<Entry>>,
    entry_count: u64,
}

/// A ranked neighbour with its approximate squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub segment: SegmentRef,
    pub distance: f64,
}

impl FingerprintIndex {
    pub fn new(config: IndexConfig, codebooks: Codebooks) -> Result<Self> {
        config.validate()?;
        if codebooks.coarse.len() != config.coarse_cells
            || codebooks.sub.len() != config.subquantizers
            || codebooks.sub.iter().any(|t| t.len() != config.sub_centroids())
            || codebooks
                .coarse
                .iter()
                .any(|c| c.len() != config.dim)
            || codebooks
                .sub
                .iter()
                .any(|t| t.iter().any(|c| c.len() != config.sub_dim()))
        {
            return Err(Error::InvalidArgument(
                "codebook shapes inconsistent with config".into(),
            ));
        }
        let cells = vec![Vec::new(); config.coarse_cells];
        Ok(FingerprintIndex {
            config,
            codebooks,
            cells,
            entry_count: 0,
        })
    }

    pub fn len(&self) -> u64 {
        self.entry_count
    }

    pub fn is_empty(&self) -> bool {
        self.entry_count == 0
    }

    fn coarse_f64(&self, cell: usize) -> Vec<f64> {
        self.codebooks.coarse[cell].iter().map(|v| *v as f64).collect()
    }

    /// Assign to the nearest coarse cell and encode the residual.
    pub fn encode(&self, embedding: &Embedding) -> (usize, Vec<u8>) {
        let v: Vec<f64> = embedding.values().iter().map(|x| *x as f64).collect();
        let mut best = (0usize, f64::INFINITY);
        for cell in 0..self.config.coarse_cells {
            let d = v
                .iter()
                .zip(&self.codebooks.coarse[cell])
                .map(|(x, c)| (x - *c as f64) * (x - *c as f64))
                .sum();
            if d < best.1 {
                best = (cell, d);
            }
        }
        let cell = best.0;
        let sub_dim = self.config.sub_dim();
        let coarse = &self.codebooks.coarse[cell];
        let mut code = Vec::with_capacity(self.config.subquantizers);
        for j in 0..self.config.subquantizers {
            let mut best = (0usize, f64::INFINITY);
            for (ci, centroid) in self.codebooks.sub[j].iter().enumerate() {
                let mut d = 0.0;
                for s in 0..sub_dim {
                    let dim_idx = j * sub_dim + s;
                    let r = v[dim_idx] - coarse[dim_idx] as f64;
                    let diff = r - centroid[s] as f64;
                    d += diff * diff;
                }
                if d < best.1 {
                    best = (ci, d);
                }
            }
            code.push(best.0 as u8);
        }
        (cell, code)
    }

    /// Reconstruction: coarse centroid plus the coded sub-centroids.
    pub fn decode(&self, cell: usize, code: &[u8]) -> Vec<f32> {
        let sub_dim = self.config.sub_dim();
        let mut out = self.codebooks.coarse[cell].clone();
        for (j, &c) in code.iter().enumerate() {
            let centroid = &self.codebooks.sub[j][c as usize];
            for s in 0..sub_dim {
                out[j * sub_dim + s] += centroid[s];
            }
        }
        out
    }

    pub fn add(&mut self, segment: SegmentRef, embedding: &Embedding) -> Result<()> {
        if embedding.dim() != self.config.dim {
            return Err(Error::InvalidArgument(format!(
                "embedding dim {} vs index dim {}",
                embedding.dim(),
                self.config.dim
            )));
        }
        let (cell, code) = self.encode(embedding);
        self.cells[cell].push(Entry { segment, code });
        self.entry_count += 1;
        Ok(())
    }

    /// Sort each inverted list by (song, segment) for deterministic layout.
    pub fn freeze(&mut self) {
        for cell in &mut self.cells {
            cell.sort_by_key(|e| e.segment);
        }
    }

    /// ADC search over the `nprobe` nearest coarse cells.
    pub fn search(&self, query: &Embedding, top_k: usize) -> Result<Vec<Neighbor>> {
        self.search_nprobe(query, top_k, self.config.nprobe)
    }

    pub fn search_nprobe(
        &self,
        query: &Embedding,
        top_k: usize,
        nprobe: usize,
    ) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.dim() != self.config.dim {
            return Err(Error::InvalidArgument(format!(
                "query dim {} vs index dim {}",
                query.dim(),
                self.config.dim
            )));
        }
        let nprobe = nprobe.min(self.config.coarse_cells).max(1);
        let q: Vec<f64> = query.values().iter().map(|v| *v as f64).collect();

        let mut cell_dists: Vec<(f64, usize)> = (0..self.config.coarse_cells)
            .map(|cell| (sq_dist(&q, &self.coarse_f64(cell)), cell))
            .collect();
        cell_dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let sub_dim = self.config.sub_dim();
        let k_star = self.config.sub_centroids();
        let mut candidates: Vec<Neighbor> = Vec::new();
        let mut lut = vec![0.0f64; self.config.subquantizers * k_star];
        for &(_, cell) in cell_dists.iter().take(nprobe) {
            if self.cells[cell].is_empty() {
                continue;
            }
            let coarse = &self.codebooks.coarse[cell];
            // residual lookup table: distance from the query residual's
            // subvector to every sub-centroid
            for j in 0..self.config.subquantizers {
                for (ci, centroid) in self.codebooks.sub[j].iter().enumerate() {
                    let mut d = 0.0;
                    for s in 0..sub_dim {
                        let dim_idx = j * sub_dim + s;
                        let r = q[dim_idx] - coarse[dim_idx] as f64;
                        let diff = r - centroid[s] as f64;
                        d += diff * diff;
                    }
                    lut[j * k_star + ci] = d;
                }
            }
            for entry in &self.cells[cell] {
                let mut dist = 0.0;
                for (j, &c) in entry.code.iter().enumerate() {
                    dist += lut[j * k_star + c as usize];
                }
                candidates.push(Neighbor {
                    segment: entry.segment,
                    distance: dist,
                });
            }
        }
        candidates.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.segment.cmp(&b.segment))
        });
        candidates.truncate(top_k);
        Ok(candidates)
    }

    /// (total code bytes, serialized file size in bytes).
    pub fn size_report(&self) -> (u64, u64) {
        let code_bytes =
            self.entry_count * self.config.subquantizers as u64 * self.config.code_bits as u64 / 8;
        (code_bytes, self.to_bytes().len() as u64)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(INDEX_MAGIC);
        bytes.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(cfg.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&(cfg.subquantizers as u32).to_le_bytes());
        bytes.push(cfg.code_bits as u8);
        bytes.extend_from_slice(&(cfg.coarse_cells as u32).to_le_bytes());
        bytes.extend_from_slice(&(cfg.nprobe as u32).to_le_bytes());
        for c in &self.codebooks.coarse {
            for v in c {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for table in &self.codebooks.sub {
            for c in table {
                for v in c {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for (cell_id, entries) in self.cells.iter().enumerate() {
            bytes.extend_from_slice(&(cell_id as u32).to_le_bytes());
            bytes.extend_from_slice(&(entries.len() as u64).to_le_bytes());
            for e in entries {
                bytes.extend_from_slice(&e.segment.song_id.to_le_bytes());
                bytes.extend_from_slice(&e.segment.segment_index.to_le_bytes());
                bytes.extend_from_slice(&e.code);
            }
        }
        bytes
    }

    /// Exact serialized size by the format arithmetic:
    /// header + coarse + sub-codebooks + per-cell tables.
    pub fn expected_serialized_bytes(&self) -> u64 {
        let cfg = &self.config;
        let header = 4 + 2 + 4 + 4 + 1 + 4 + 4;
        let coarse = cfg.coarse_cells as u64 * cfg.dim as u64 * 4;
        let sub = cfg.subquantizers as u64 * cfg.sub_centroids() as u64 * cfg.sub_dim() as u64 * 4;
        let cells = cfg.coarse_cells as u64 * (4 + 8)
            + self.entry_count * (4 + 4 + cfg.subquantizers as u64);
        header as u64 + coarse + sub + cells
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FingerprintIndex> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
        let bad = |reason: &str| Error::BadFileFormat {
            path: display.clone(),
            reason: reason.to_string(),
        };
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                Err(bad("truncated file"))
            } else {
                let s = &bytes[*pos..*pos + n];
                *pos += n;
                Ok(s)
            }
        };
        if take(&mut pos, 4)? != INDEX_MAGIC {
            return Err(bad("missing AFPI magic"));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(bad("unsupported version"));
        }
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let code_bits = take(&mut pos, 1)?[0] as u32;
        let k = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let nprobe = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let config = IndexConfig {
            dim,
            subquantizers: m,
            code_bits,
            coarse_cells: k,
            nprobe,
            seed: 0,
        };
        config.validate()?;

        let read_f32 = |pos: &mut usize| -> Result<f32> {
            Ok(f32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let mut coarse = Vec::with_capacity(k);
        for _ in 0..k {
            let mut c = Vec::with_capacity(dim);
            for _ in 0..dim {
                c.push(read_f32(&mut pos)?);
            }
            coarse.push(c);
        }
        let mut sub = Vec::with_capacity(m);
        for _ in 0..m {
            let mut table = Vec::with_capacity(config.sub_centroids());
            for _ in 0..config.sub_centroids() {
                let mut c = Vec::with_capacity(config.sub_dim());
                for _ in 0..config.sub_dim() {
                    c.push(read_f32(&mut pos)?);
                }
                table.push(c);
            }
            sub.push(table);
        }

        let mut index = FingerprintIndex::new(config, Codebooks { coarse, sub })?;
        for expected_cell in 0..k {
            let cell_id = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            if cell_id != expected_cell {
                return Err(bad("cell table out of order"));
            }
            let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            for _ in 0..count {
                let song = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
                let seg = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
                let code = take(&mut pos, m)?.to_vec();
                if code.iter().any(|c| (*c as usize) >= config.sub_centroids()) {
                    return Err(bad("code index out of range"));
                }
                index.cells[cell_id].push(Entry {
                    segment: SegmentRef::new(song, seg),
                    code,
                });
                index.entry_count += 1;
            }
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(index)
    }
}

/// Song metadata sidecar stored next to an index file.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SongMeta {
    pub title: String,
    pub source_path: String,
    pub duration_s: f64,
}

pub type SongTable = BTreeMap<u32, SongMeta>;

pub fn save_song_table(path: impl AsRef<Path>, table: &SongTable) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_vec_pretty(table)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_song_table(path: impl AsRef<Path>) -> Result<SongTable> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}
