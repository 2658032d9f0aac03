//! Sub-batch construction from variable-length sentence pairs.
//!
//! Three policies: a padded token budget (sort by length, fill greedily), a
//! shape-restricted variant (only pairs from the same length window may
//! share a sub-batch), and a time-balanced variant that grows each sub-batch
//! until a fitted timing model says it has reached a fixed time target.

mod timing;

pub use timing::{
    fit_timing_model, percentile, read_measurements_csv, timing_histogram,
    write_measurements_csv, HistBin, Measurement, TimingModel, TimingStats,
    LENGTH_BUCKET_WIDTH, SENTENCE_BUCKET_WIDTH,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SubBatchTensors;

/// One parallel sentence pair, tokenized to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: u64,
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl SentencePair {
    pub fn new(id: u64, src: Vec<u32>, tgt: Vec<u32>) -> Self {
        debug_assert!(!src.is_empty() && !tgt.is_empty());
        SentencePair { id, src, tgt }
    }
}

/// A group of pairs padded to a common shape: the per-worker unit of work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubBatch {
    pub pair_ids: Vec<u64>,
    pub num_sentences: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    /// Sum of member target lengths (no padding).
    pub tgt_tokens_nopad: usize,
}

impl SubBatch {
    fn from_members(members: &[&SentencePair]) -> Self {
        SubBatch {
            pair_ids: members.iter().map(|p| p.id).collect(),
            num_sentences: members.len(),
            max_src_len: members.iter().map(|p| p.src.len()).max().unwrap_or(0),
            max_tgt_len: members.iter().map(|p| p.tgt.len()).max().unwrap_or(0),
            tgt_tokens_nopad: members.iter().map(|p| p.tgt.len()).sum(),
        }
    }

    /// Padded area on the larger of the two sides; this is what the token
    /// budget constrains.
    pub fn padded_area(&self) -> usize {
        self.num_sentences * self.max_src_len.max(self.max_tgt_len)
    }
}

/// Canonical batching order: ascending by the longer side, then source
/// length, then target length, ties broken by pair id so batching is
/// deterministic.
pub fn canonical_order(corpus: &[SentencePair]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.sort_by_key(|&i| {
        let p = &corpus[i];
        (p.src.len().max(p.tgt.len()), p.src.len(), p.tgt.len(), p.id)
    });
    idx
}

fn close_group(corpus: &[SentencePair], group: &[usize]) -> SubBatch {
    let members: Vec<&SentencePair> = group.iter().map(|&i| &corpus[i]).collect();
    SubBatch::from_members(&members)
}

/// Greedy token-budget batching over the length-sorted corpus.
///
/// Every sub-batch satisfies `max(n * max_src, n * max_tgt) <= max_tokens`;
/// members are contiguous in canonical order, so they have similar lengths
/// by construction.
pub fn make_token_budget_batches(
    corpus: &[SentencePair],
    max_tokens: usize,
) -> Result<Vec<SubBatch>> {
    batch_contiguous(corpus, &canonical_order(corpus), max_tokens)
}

fn batch_contiguous(
    corpus: &[SentencePair],
    order: &[usize],
    max_tokens: usize,
) -> Result<Vec<SubBatch>> {
    let mut out = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let (mut max_s, mut max_t) = (0usize, 0usize);
    for &i in order {
        let p = &corpus[i];
        let longer = p.src.len().max(p.tgt.len());
        if longer > max_tokens {
            return Err(Error::Data(format!(
                "pair {} is longer ({longer}) than the token budget ({max_tokens})",
                p.id
            )));
        }
        let cand_s = max_s.max(p.src.len());
        let cand_t = max_t.max(p.tgt.len());
        let n = group.len() + 1;
        if !group.is_empty() && n * cand_s.max(cand_t) > max_tokens {
            out.push(close_group(corpus, &group));
            group.clear();
            max_s = 0;
            max_t = 0;
        }
        max_s = max_s.max(p.src.len());
        max_t = max_t.max(p.tgt.len());
        group.push(i);
    }
    if !group.is_empty() {
        out.push(close_group(corpus, &group));
    }
    Ok(out)
}

/// Length-window key used by shape-restricted batching.
pub fn shape_class_key(src_len: usize, tgt_len: usize, tolerance: usize) -> (u32, u32) {
    (
        ((src_len - 1) / tolerance) as u32,
        ((tgt_len - 1) / tolerance) as u32,
    )
}

/// Shape-restricted batching: pairs are first split into length-window
/// classes (source and target lengths each within a `tolerance`-wide
/// window), then batched under the same token budget. No sub-batch mixes
/// classes.
pub fn make_shape_batches(
    corpus: &[SentencePair],
    tolerance: usize,
    max_tokens: usize,
) -> Result<Vec<SubBatch>> {
    if tolerance == 0 {
        return Err(Error::Config("shape tolerance must be at least 1".into()));
    }
    let mut classes: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.iter().enumerate() {
        classes
            .entry(shape_class_key(p.src.len(), p.tgt.len(), tolerance))
            .or_default()
            .push(i);
    }
    let mut out = Vec::new();
    for (_, mut members) in classes {
        members.sort_by_key(|&i| {
            let p = &corpus[i];
            (p.src.len().max(p.tgt.len()), p.src.len(), p.tgt.len(), p.id)
        });
        out.extend(batch_contiguous(corpus, &members, max_tokens)?);
    }
    Ok(out)
}

/// The fixed per-sub-batch time target: a percentile of the token-budget
/// batching's estimated-time distribution on the same corpus.
pub fn time_balanced_target(
    corpus: &[SentencePair],
    model: &TimingModel,
    max_tokens: usize,
    target_percentile: f64,
) -> Result<f64> {
    let batches = make_token_budget_batches(corpus, max_tokens)?;
    if batches.is_empty() {
        return Err(Error::Data("empty corpus has no timing distribution".into()));
    }
    let mut times: Vec<f64> = batches.iter().map(|b| model.estimate(b)).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(percentile(&times, target_percentile))
}

/// Time-balanced batches plus the ids of single sentences whose estimated
/// time already exceeds the target (kept as flagged singletons).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBalancedBatches {
    pub batches: Vec<SubBatch>,
    pub oversized_singletons: Vec<u64>,
}

/// Grow sub-batches over the length-sorted corpus until the estimated
/// processing time reaches `target_seconds`. The sentence that crosses the
/// target may stay if it overshoots by at most 10%; otherwise the sub-batch
/// closes first.
pub fn make_time_balanced_batches(
    corpus: &[SentencePair],
    model: &TimingModel,
    target_seconds: f64,
) -> Result<TimeBalancedBatches> {
    if target_seconds <= 0.0 {
        return Err(Error::Config("time target must be positive".into()));
    }
    let order = canonical_order(corpus);
    let mut batches: Vec<SubBatch> = Vec::new();
    let mut oversized: Vec<u64> = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let (mut max_s, mut max_t) = (0usize, 0usize);

    #[allow(clippy::too_many_arguments)]
    fn close(
        corpus: &[SentencePair],
        model: &TimingModel,
        target: f64,
        group: &mut Vec<usize>,
        max_s: &mut usize,
        max_t: &mut usize,
        batches: &mut Vec<SubBatch>,
        oversized: &mut Vec<u64>,
    ) {
        if group.is_empty() {
            return;
        }
        let b = close_group(corpus, group);
        if b.num_sentences == 1 && model.estimate(&b) > target {
            oversized.push(b.pair_ids[0]);
        }
        batches.push(b);
        group.clear();
        *max_s = 0;
        *max_t = 0;
    }

    for &i in &order {
        let p = &corpus[i];
        if !group.is_empty() {
            let cur = model.estimate_shape(group.len() as u32, max_s as u32, max_t as u32);
            let cand = model.estimate_shape(
                (group.len() + 1) as u32,
                max_s.max(p.src.len()) as u32,
                max_t.max(p.tgt.len()) as u32,
            );
            if cur >= target_seconds || cand > 1.1 * target_seconds {
                close(
                    corpus, model, target_seconds, &mut group, &mut max_s, &mut max_t,
                    &mut batches, &mut oversized,
                );
            }
        }
        max_s = max_s.max(p.src.len());
        max_t = max_t.max(p.tgt.len());
        group.push(i);
    }
    close(
        corpus, model, target_seconds, &mut group, &mut max_s, &mut max_t, &mut batches,
        &mut oversized,
    );

    Ok(TimeBalancedBatches {
        batches,
        oversized_singletons: oversized,
    })
}

/// Materialize a sub-batch into padded token tensors, given the corpus it
/// was built from.
pub fn materialize(corpus: &[SentencePair], batch: &SubBatch) -> Result<SubBatchTensors> {
    let by_id: BTreeMap<u64, &SentencePair> = corpus.iter().map(|p| (p.id, p)).collect();
    let mut members = Vec::with_capacity(batch.pair_ids.len());
    for id in &batch.pair_ids {
        let p = by_id
            .get(id)
            .ok_or_else(|| Error::Data(format!("pair id {id} not found in corpus")))?;
        members.push((p.src.as_slice(), p.tgt.as_slice()));
    }
    Ok(SubBatchTensors::from_pairs(&members))
}
