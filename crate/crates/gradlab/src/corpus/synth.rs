//! Synthetic corpora and a synthetic cost surface for the timing testbed.
//!
//! The calibrated corpus is tuned so that token-budget batching reproduces,
//! in ratio terms, the straggler spread seen on real hardware: slowest
//! sub-batch around twice the mean, fastest around 0.4-0.5x. The cost of a
//! shape combines a padded-area term, a fixed per-launch term, and a
//! length-proportional term, which is what makes long-sentence sub-batches
//! disproportionately slow under an area-capped budget.

use rand::Rng;

use super::Vocab;
use crate::batching::{Measurement, SentencePair};
use crate::rng::substream;

/// Padded-area cost per source token-slot, seconds.
pub const COST_AREA_SRC: f64 = 5e-6;
/// Padded-area cost per target token-slot, seconds.
pub const COST_AREA_TGT: f64 = 5e-6;
/// Fixed per-sub-batch cost, seconds.
pub const COST_FIXED: f64 = 1.3e-2;
/// Per-unit-of-max-length cost, seconds.
pub const COST_LENGTH: f64 = 3.5e-4;

/// Ground-truth processing cost of a sub-batch shape, seconds.
pub fn synthetic_cost(num_sentences: u32, max_src_len: u32, max_tgt_len: u32) -> f64 {
    let n = f64::from(num_sentences);
    COST_AREA_SRC * n * f64::from(max_src_len)
        + COST_AREA_TGT * n * f64::from(max_tgt_len)
        + COST_FIXED
        + COST_LENGTH * f64::from(max_src_len + max_tgt_len)
}

/// Vocabulary for generated corpora: `<pad>` plus `w1..w{size-1}`.
pub fn synth_vocab(size: usize) -> Vocab {
    let mut toks = Vec::with_capacity(size);
    toks.push("<pad>".to_string());
    for i in 1..size {
        toks.push(format!("w{i}"));
    }
    Vocab::new(toks).expect("generated vocab is valid")
}

/// Small trainable corpus. Each source sentence is dominated by one topic
/// token, and the targets concentrate on a value derived from that topic and
/// the sentence's length class. The pooled source embedding therefore
/// decodes the target (the task is learnable), and gradients differ across
/// length classes.
pub fn toy_corpus(seed: u64, n_pairs: usize, vocab_size: usize) -> Vec<SentencePair> {
    assert!(vocab_size >= 8);
    let mut rng = substream(seed, "toy-corpus");
    let v = vocab_size as u32;
    (0..n_pairs as u64)
        .map(|id| {
            let topic = rng.random_range(1..v);
            let src_len = rng.random_range(3..=10usize);
            let src: Vec<u32> = (0..src_len)
                .map(|_| {
                    if rng.random_range(0..5u32) == 0 {
                        rng.random_range(1..v)
                    } else {
                        topic
                    }
                })
                .collect();
            let len_class = (src_len / 4) as u32;
            let base = 1 + ((topic - 1) + 7 * len_class) % (v - 1);
            let tgt_len = rng.random_range(3..=10usize);
            let tgt: Vec<u32> = (0..tgt_len)
                .map(|_| {
                    if rng.random_range(0..10u32) == 0 {
                        rng.random_range(1..v)
                    } else {
                        base
                    }
                })
                .collect();
            SentencePair::new(id, src, tgt)
        })
        .collect()
}

/// Corpus whose length mix reproduces the straggler spread of token-budget
/// batching under [`synthetic_cost`]: mostly short sentences, a mid band,
/// and a thin tail of very long ones.
pub fn calibrated_corpus(seed: u64, n_pairs: usize) -> Vec<SentencePair> {
    let mut rng = substream(seed, "calibrated-corpus");
    let v = 100u32;
    (0..n_pairs as u64)
        .map(|id| {
            let band = rng.random_range(0..100u32);
            let src_len = if band < 85 {
                rng.random_range(5..=20usize)
            } else if band < 97 {
                rng.random_range(40..=120usize)
            } else {
                rng.random_range(180..=250usize)
            };
            let ratio = rng.random_range(0.9..=1.1f64);
            let tgt_len = ((src_len as f64 * ratio).round() as usize).clamp(1, 250);
            let src = (0..src_len).map(|_| rng.random_range(1..v)).collect();
            let tgt = (0..tgt_len).map(|_| rng.random_range(1..v)).collect();
            SentencePair::new(id, src, tgt)
        })
        .collect()
}

/// Measure every contiguous run of the canonically sorted corpus up to an
/// area cap. Each batching policy builds contiguous runs over the same
/// order, so a model fitted from these measurements answers every shape the
/// policies will ask about from the table rather than the affine fallback.
pub fn calibration_measurements(corpus: &[SentencePair], area_cap: usize) -> Vec<Measurement> {
    let order = crate::batching::canonical_order(corpus);
    let lens: Vec<(usize, usize)> = order
        .iter()
        .map(|&i| (corpus[i].src.len(), corpus[i].tgt.len()))
        .collect();
    let mut out = Vec::new();
    for start in 0..lens.len() {
        let (mut max_s, mut max_t) = (0usize, 0usize);
        for (n, &(s, t)) in lens[start..].iter().enumerate() {
            max_s = max_s.max(s);
            max_t = max_t.max(t);
            let n = n + 1;
            if n * max_s.max(max_t) > area_cap {
                break;
            }
            out.push(Measurement {
                num_sentences: n as u32,
                max_src_len: max_s as u32,
                max_tgt_len: max_t as u32,
                seconds: synthetic_cost(n as u32, max_s as u32, max_t as u32),
            });
        }
    }
    out
}
