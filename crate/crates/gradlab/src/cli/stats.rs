//! `gradlab batch-stats`: per-policy estimated-time histograms and a
//! summary of the spread each policy produces.

use serde::Serialize;

use crate::batching::{
    make_shape_batches, make_time_balanced_batches, make_token_budget_batches,
    time_balanced_target, timing_histogram, SubBatch,
};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Serialize)]
struct PolicySummary {
    policy: &'static str,
    n_batches: usize,
    mean_s: f64,
    min_s: f64,
    max_s: f64,
    max_over_mean: f64,
    min_over_mean: f64,
    cv: f64,
    p50_s: f64,
    p90_s: f64,
    /// Padded area over both sides, summed over sub-batches.
    padded_tokens: u64,
    /// Target tokens excluding padding.
    nopad_tokens: u64,
    oversized_singletons: usize,
}

#[derive(Serialize)]
struct Summary {
    time_target_s: f64,
    policies: Vec<PolicySummary>,
}

pub fn cmd_batch_stats(cfg: RunConfig) -> Result<()> {
    let dir = super::out_dir(&cfg)?;
    let (corpus, _vocab) = super::load_corpus(&cfg)?;
    let timing = super::load_timing_model(&cfg)?;

    let target = time_balanced_target(&corpus, &timing, cfg.max_tokens, cfg.target_percentile)?;
    let balanced = make_time_balanced_batches(&corpus, &timing, target)?;
    let policies: Vec<(&'static str, Vec<SubBatch>, usize)> = vec![
        (
            "token_budget",
            make_token_budget_batches(&corpus, cfg.max_tokens)?,
            0,
        ),
        (
            "shape",
            make_shape_batches(&corpus, cfg.shape_tolerance, cfg.max_tokens)?,
            0,
        ),
        (
            "time_balanced",
            balanced.batches,
            balanced.oversized_singletons.len(),
        ),
    ];

    let pcts = [10.0, 25.0, 50.0, 75.0, 90.0, 99.0];
    let mut summaries = Vec::new();
    for (name, batches, oversized) in &policies {
        let stats = timing_histogram(batches, &timing, cfg.hist_bins, &pcts)?;
        std::fs::write(dir.join(format!("hist_{name}.csv")), stats.histogram_csv())?;
        let p = |q: f64| {
            stats
                .percentiles
                .iter()
                .find(|(pq, _)| *pq == q)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        };
        summaries.push(PolicySummary {
            policy: name,
            n_batches: batches.len(),
            mean_s: stats.mean,
            min_s: stats.min,
            max_s: stats.max,
            max_over_mean: stats.max / stats.mean,
            min_over_mean: stats.min / stats.mean,
            cv: stats.cv,
            p50_s: p(50.0),
            p90_s: p(90.0),
            padded_tokens: batches
                .iter()
                .map(|b| (b.num_sentences * (b.max_src_len + b.max_tgt_len)) as u64)
                .sum(),
            nopad_tokens: batches.iter().map(|b| b.tgt_tokens_nopad as u64).sum(),
            oversized_singletons: *oversized,
        });
    }

    let summary = Summary {
        time_target_s: target,
        policies: summaries,
    };
    let body = serde_json::to_string_pretty(&summary)?;
    std::fs::write(dir.join("summary.json"), &body)?;
    println!("{body}");
    cfg.echo_to(&dir)?;
    Ok(())
}
