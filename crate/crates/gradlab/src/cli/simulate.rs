//! `gradlab simulate`: event traces and a throughput report over a grid of
//! (workers, cumul, overlap) configurations.

use std::fs::File;
use std::io::BufWriter;

use crate::config::RunConfig;
use crate::distsim::{simulate_epoch, speedup_report, CommModel, EventTrace, SimParams};
use crate::error::Result;
use crate::model::ModelDims;

pub fn cmd_simulate(cfg: RunConfig) -> Result<()> {
    let dir = super::out_dir(&cfg)?;
    let (corpus, vocab) = super::load_corpus(&cfg)?;
    let timing = super::load_timing_model(&cfg)?;
    let batches = super::build_batches(&corpus, &cfg, Some(&timing))?;

    // Wire payload of the toy model, optionally scaled up to study the
    // transfer volumes of a much larger network.
    let dims = ModelDims::from_config(&cfg.train_config(vocab.len()));
    let elem = if cfg.fp16 { 2 } else { 4 };
    let layer_bytes: Vec<u64> = (0..dims.layer_count())
        .rev() // emission order: top of the network first
        .map(|i| dims.layer_len(i) as u64 * elem * cfg.param_scale)
        .collect();

    let mut workers_grid = vec![1, cfg.workers];
    workers_grid.dedup();
    let mut cumul_grid = vec![1, cfg.cumul];
    cumul_grid.dedup();

    let mut traces: Vec<(String, EventTrace)> = Vec::new();
    for &w in &workers_grid {
        for &c in &cumul_grid {
            for overlap in [false, true] {
                let label = format!("w{w}_c{c}_{}", if overlap { "overlap" } else { "serial" });
                let comm = CommModel {
                    latency_s: cfg.comm_latency_s,
                    bandwidth_bytes_per_s: cfg.comm_bandwidth_bytes_per_s,
                    workers: w,
                };
                let sim = SimParams {
                    workers: w,
                    cumul: c,
                    overlap,
                    steps: cfg.steps,
                    jitter_sigma: cfg.jitter_sigma,
                    seed: cfg.seed,
                    ..SimParams::default()
                };
                let trace = simulate_epoch(
                    &batches,
                    &timing,
                    &comm,
                    &layer_bytes,
                    cfg.bucket_bytes(),
                    &sim,
                )?;
                trace.write_jsonl(BufWriter::new(File::create(
                    dir.join(format!("trace_{label}.jsonl")),
                )?))?;
                traces.push((label, trace));
            }
        }
    }

    let rows: Vec<(String, &EventTrace)> =
        traces.iter().map(|(l, t)| (l.clone(), t)).collect();
    let report = speedup_report(&rows);
    std::fs::write(dir.join("report.csv"), &report)?;
    print!("{report}");
    cfg.echo_to(&dir)?;
    Ok(())
}
