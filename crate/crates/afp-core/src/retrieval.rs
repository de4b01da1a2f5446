//! Song identification over a fingerprint index: segment the query, embed,
//! search top-k per segment, and majority-vote the winner. Also the
//! segment-level Top-1 hit judgment with the +/-500 ms rule.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dsp::{segment_song, AudioBuffer, SegmentRef};
use crate::encoder::{embed_segment, Embedding, EncoderParams};
use crate::pqindex::{FingerprintIndex, Neighbor};
use crate::{Error, Result};

/// Maps 1 s segments to embeddings; pluggable so trained weights, external
/// models, or test stubs can drive retrieval.
pub trait Embedder: Sync {
    fn embed(&self, segment: &AudioBuffer) -> Result<Embedding>;
}

/// The in-repo encoder as an embedder.
pub struct EncoderEmbedder<'a> {
    pub params: &'a EncoderParams,
}

impl Embedder for EncoderEmbedder<'_> {
    fn embed(&self, segment: &AudioBuffer) -> Result<Embedding> {
        embed_segment(self.params, segment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Hit {
    pub song_id: u32,
    pub segment_index: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SegmentHits {
    pub segment: u32,
    pub neighbors: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct QueryResult {
    pub winner: Option<u32>,
    pub votes: BTreeMap<u32, u32>,
    pub tie_broken: bool,
    pub per_segment: Vec<SegmentHits>,
}

/// Majority voting: the winner is the song with the most neighbour
/// occurrences; vote ties break by smaller mean distance, then lower id.
pub(crate) fn tally_votes(per_segment: &[Vec<Neighbor>]) -> (Option<u32>, BTreeMap<u32, u32>, bool) {
    let mut votes: BTreeMap<u32, u32> = BTreeMap::new();
    let mut dist_sum: BTreeMap<u32, f64> = BTreeMap::new();
    for neighbors in per_segment {
        for n in neighbors {
            *votes.entry(n.segment.song_id).or_insert(0) += 1;
            *dist_sum.entry(n.segment.song_id).or_insert(0.0) += n.distance;
        }
    }
    let Some(max_votes) = votes.values().copied().max() else {
        return (None, votes, false);
    };
    let contenders: Vec<u32> = votes
        .iter()
        .filter(|(_, v)| **v == max_votes)
        .map(|(s, _)| *s)
        .collect();
    let tie_broken = contenders.len() > 1;
    let winner = contenders
        .into_iter()
        .min_by(|a, b| {
            let mean_a = dist_sum[a] / votes[a] as f64;
            let mean_b = dist_sum[b] / votes[b] as f64;
            mean_a.total_cmp(&mean_b).then(a.cmp(b))
        })
        .unwrap();
    (Some(winner), votes, tie_broken)
}

/// Identify the song in `query_audio` against the index.
pub fn identify(
    query_audio: &AudioBuffer,
    index: &FingerprintIndex,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<QueryResult> {
    identify_nprobe(query_audio, index, embedder, top_k, index.config.nprobe)
}

pub fn identify_nprobe(
    query_audio: &AudioBuffer,
    index: &FingerprintIndex,
    embedder: &dyn Embedder,
    top_k: usize,
    nprobe: usize,
) -> Result<QueryResult> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let segments = segment_song(query_audio)?;
    let results: Vec<(u32, Vec<Neighbor>)> = segments
        .par_iter()
        .map(|(i, seg)| {
            let embedding = embedder.embed(seg)?;
            let neighbors = index.search_nprobe(&embedding, top_k, nprobe)?;
            Ok((*i, neighbors))
        })
        .collect::<Result<Vec<_>>>()?;

    let neighbor_lists: Vec<Vec<Neighbor>> = results.iter().map(|(_, n)| n.clone()).collect();
    let (winner, votes, tie_broken) = tally_votes(&neighbor_lists);
    let per_segment = results
        .into_iter()
        .map(|(segment, neighbors)| SegmentHits {
            segment,
            neighbors: neighbors
                .into_iter()
                .map(|n| Hit {
                    song_id: n.segment.song_id,
                    segment_index: n.segment.segment_index,
                    distance: n.distance,
                })
                .collect(),
        })
        .collect();
    Ok(QueryResult {
        winner,
        votes,
        tie_broken,
        per_segment,
    })
}

/// Outcome of judging a single 1 s query segment at Top-1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HitJudgment {
    pub hit: bool,
    pub predicted: SegmentRef,
    pub truth_song: u32,
    pub truth_start_s: f64,
}

const HIT_WINDOW_S: f64 = 0.5;

/// Single-nearest-neighbour judgment: a hit needs the right song and a
/// retrieved timestamp within +/-500 ms (inclusive) of the true start.
pub fn judge_top1(
    query_segment: &AudioBuffer,
    index: &FingerprintIndex,
    embedder: &dyn Embedder,
    truth_song: u32,
    truth_start_s: f64,
) -> Result<HitJudgment> {
    judge_top1_nprobe(
        query_segment,
        index,
        embedder,
        truth_song,
        truth_start_s,
        index.config.nprobe,
    )
}

pub fn judge_top1_nprobe(
    query_segment: &AudioBuffer,
    index: &FingerprintIndex,
    embedder: &dyn Embedder,
    truth_song: u32,
    truth_start_s: f64,
    nprobe: usize,
) -> Result<HitJudgment> {
    let embedding = embedder.embed(query_segment)?;
    let neighbors = index.search_nprobe(&embedding, 1, nprobe)?;
    let predicted = neighbors
        .first()
        .ok_or(Error::EmptyIndex)?
        .segment;
    let hit = predicted.song_id == truth_song
        && (predicted.start_s() - truth_start_s).abs() <= HIT_WINDOW_S + 1e-9;
    Ok(HitJudgment {
        hit,
        predicted,
        truth_song,
        truth_start_s,
    })
}

/// `100 * hits / (hits + misses)`.
pub fn top1_hit_rate(judgments: &[HitJudgment]) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::InvalidArgument(
            "hit rate undefined on an empty judgment set".into(),
        ));
    }
    let hits = judgments.iter().filter(|j| j.hit).count();
    Ok(100.0 * hits as f64 / judgments.len() as f64)
}
