//! `gradlab train`: synchronous data-parallel training on the toy model.

use std::io::{BufWriter, Write};
use std::time::Instant;

use serde::Serialize;

use crate::config::{BatchingPolicy, RunConfig};
use crate::distsim::{train_step_sync, ShuffledCycle};
use crate::error::{Error, Result};
use crate::lowprec::LossScaler;
use crate::model::{lr_at, AdamState, Checkpoint, ModelParams, SubBatchTensors};

#[derive(Serialize)]
struct ScalerEventRecord {
    old_scale: f32,
    new_scale: f32,
    reason: &'static str,
}

/// One metrics line per optimizer step. Throughput is deliberately absent:
/// it depends on wall-clock time, which would break byte-identical reruns;
/// it goes to stderr instead.
#[derive(Serialize)]
struct MetricsRecord {
    step: u64,
    loss_per_token: f64,
    lr: f64,
    scale: f32,
    skipped: bool,
    tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaler_event: Option<ScalerEventRecord>,
}

pub fn cmd_train(cfg: RunConfig) -> Result<()> {
    let dir = super::out_dir(&cfg)?;
    let (corpus, vocab) = super::load_corpus(&cfg)?;
    let tcfg = cfg.train_config(vocab.len());
    tcfg.validate()?;

    let timing = match cfg.batching_policy {
        BatchingPolicy::TimeBalanced => Some(super::load_timing_model(&cfg)?),
        _ => None,
    };
    let batches = super::build_batches(&corpus, &cfg, timing.as_ref())?;
    let tensors: Result<Vec<SubBatchTensors>> = batches
        .iter()
        .map(|b| crate::batching::materialize(&corpus, b))
        .collect();
    let tensors = tensors?;
    if tensors.len() < cfg.workers {
        return Err(Error::Data(format!(
            "{} sub-batches cannot feed {} workers",
            tensors.len(),
            cfg.workers
        )));
    }

    let mut params = ModelParams::init(&tcfg, cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut scaler = cfg.fp16.then(LossScaler::default);
    let mut cycle = ShuffledCycle::new(tensors.len(), cfg.seed, "batching");

    let mut metrics = BufWriter::new(std::fs::File::create(dir.join("metrics.jsonl"))?);
    let per_step = cfg.workers * cfg.cumul;
    let started = Instant::now();
    let mut tokens_done = 0u64;

    for step in 1..=cfg.steps as u64 {
        let sel: Vec<&SubBatchTensors> =
            (0..per_step).map(|_| &tensors[cycle.next_index()]).collect();
        let lr = lr_at(adam.t + 1, &tcfg);
        let stats = train_step_sync(&mut params, &mut adam, scaler.as_mut(), &sel, cfg.workers, &tcfg)?;
        tokens_done += stats.token_count;

        let record = MetricsRecord {
            step,
            loss_per_token: stats.loss_sum / stats.token_count as f64,
            lr,
            scale: stats.scale,
            skipped: !stats.applied,
            tokens: stats.token_count,
            scaler_event: stats.scaler.and_then(|o| {
                (o.reason != "ok").then_some(ScalerEventRecord {
                    old_scale: o.old_scale,
                    new_scale: o.new_scale,
                    reason: o.reason,
                })
            }),
        };
        serde_json::to_writer(&mut metrics, &record)?;
        metrics.write_all(b"\n")?;

        if step % 50 == 0 || step == cfg.steps as u64 {
            let elapsed = started.elapsed().as_secs_f64();
            eprintln!(
                "step {step}/{}: loss/token {:.4}, {:.0} tokens/sec",
                cfg.steps,
                record.loss_per_token,
                tokens_done as f64 / elapsed.max(1e-9)
            );
        }
    }
    metrics.flush()?;

    Checkpoint {
        config: tcfg,
        params,
        adam,
        scaler,
        step: cfg.steps as u64,
    }
    .save(&dir.join("checkpoint.json"))?;
    cfg.echo_to(&dir)?;
    Ok(())
}
