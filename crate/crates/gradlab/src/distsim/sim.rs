//! Discrete-event simulator for synchronous steps: per-worker compute from
//! the timing model, barrier idle time, and a communication phase that is
//! either serialized after the barrier or overlapped with the tail of the
//! straggler's backward pass.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::batching::{SubBatch, TimingModel};
use crate::error::{Error, Result};
use crate::rng::substream;

use super::overlap::{overlap_schedule, CommModel, ScheduleEvent};

/// Simulation knobs for one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SimParams {
    pub workers: usize,
    pub cumul: usize,
    pub overlap: bool,
    /// Number of optimizer steps to simulate; 0 means one pass over the
    /// batch list. The list reshuffles on every pass.
    pub steps: usize,
    /// Multiplicative log-normal jitter sigma on per-worker compute time;
    /// 0 keeps times purely table-driven.
    pub jitter_sigma: f64,
    /// Fraction of a sub-batch's time spent in backward; bounds how much of
    /// the straggler's tail communication can hide behind.
    pub bwd_fraction: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            workers: 8,
            cumul: 16,
            overlap: false,
            steps: 0,
            jitter_sigma: 0.0,
            // Backward is roughly twice the cost of forward.
            bwd_fraction: 2.0 / 3.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Compute,
    Comm,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub worker: usize,
    pub step: usize,
    pub kind: EventKind,
    pub start_s: f64,
    pub end_s: f64,
}

/// Per-worker intervals plus aggregate occupancy totals for one simulated
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
    pub wall_s: f64,
    pub compute_s: f64,
    pub idle_s: f64,
    /// Communication time not hidden behind compute, summed over steps.
    pub comm_exposed_s: f64,
    pub tokens: u64,
    pub steps: usize,
    pub workers: usize,
}

impl EventTrace {
    /// Barrier wait as a fraction of worker busy+wait time.
    pub fn idle_fraction(&self) -> f64 {
        if self.compute_s + self.idle_s == 0.0 {
            0.0
        } else {
            self.idle_s / (self.compute_s + self.idle_s)
        }
    }

    /// Exposed communication as a fraction of wall time.
    pub fn comm_fraction(&self) -> f64 {
        if self.wall_s == 0.0 {
            0.0
        } else {
            self.comm_exposed_s / self.wall_s
        }
    }

    pub fn tokens_per_sec(&self) -> f64 {
        if self.wall_s == 0.0 {
            0.0
        } else {
            self.tokens as f64 / self.wall_s
        }
    }

    /// JSON-lines, one record per event.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Deterministically reshuffled cycle over `0..n`, one permutation per pass.
pub struct ShuffledCycle {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ShuffledCycle {
    pub fn new(n: usize, seed: u64, stream: &str) -> Self {
        let mut rng = substream(seed, stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        ShuffledCycle { order, pos: 0, rng }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// Simulate synchronous training over the given sub-batches.
///
/// Sub-batches are dealt round-robin from a shuffled cycle: each step
/// consumes `workers * cumul` of them, worker `w` taking a contiguous run of
/// `cumul`. Compute time per worker is the timing-model sum times an
/// optional jitter factor; the all-reduce barrier charges the difference to
/// idle; communication of `layer_bytes` follows, overlapped with the tail of
/// the straggler's final backward when `overlap` is set.
pub fn simulate_epoch(
    batches: &[SubBatch],
    timing: &TimingModel,
    comm: &CommModel,
    layer_bytes: &[u64],
    bucket_threshold: u64,
    sim: &SimParams,
) -> Result<EventTrace> {
    if sim.workers == 0 || sim.cumul == 0 {
        return Err(Error::Config("workers and cumul must be positive".into()));
    }
    if batches.len() < sim.workers {
        return Err(Error::Config(format!(
            "{} workers but only {} sub-batches",
            sim.workers,
            batches.len()
        )));
    }
    if !(0.0..=1.0).contains(&sim.bwd_fraction) {
        return Err(Error::Config("bwd_fraction must be in [0,1]".into()));
    }
    let per_step = sim.workers * sim.cumul;
    let steps = if sim.steps > 0 {
        sim.steps
    } else {
        (batches.len() / per_step).max(1)
    };

    let mut deal = ShuffledCycle::new(batches.len(), sim.seed, "batching");
    let mut jitter_rng = substream(sim.seed, "jitter");
    let jitter = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (sim.jitter_sigma * z).exp()
    };

    let mut events = Vec::new();
    let mut t0 = 0.0f64;
    let mut compute_s = 0.0;
    let mut idle_s = 0.0;
    let mut comm_exposed_s = 0.0;
    let mut tokens = 0u64;

    for step in 0..steps {
        // Deal this step's sub-batches and price each worker's share.
        let mut worker_time = vec![0.0f64; sim.workers];
        let mut last_batch_time = vec![0.0f64; sim.workers];
        for w in 0..sim.workers {
            let factor = jitter(&mut jitter_rng);
            for _ in 0..sim.cumul {
                let b = &batches[deal.next_index()];
                let dt = timing.estimate(b) * factor;
                worker_time[w] += dt;
                last_batch_time[w] = dt;
                tokens += b.tgt_tokens_nopad as u64;
            }
        }

        let max_t = worker_time.iter().cloned().fold(0.0, f64::max);
        let barrier = t0 + max_t;
        let straggler = worker_time
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(w, _)| w)
            .unwrap_or(0);

        for (w, &dt) in worker_time.iter().enumerate() {
            events.push(TraceEvent {
                worker: w,
                step,
                kind: EventKind::Compute,
                start_s: t0,
                end_s: t0 + dt,
            });
            compute_s += dt;
            let wait = max_t - dt;
            if wait > 0.0 {
                events.push(TraceEvent {
                    worker: w,
                    step,
                    kind: EventKind::Idle,
                    start_s: t0 + dt,
                    end_s: barrier,
                });
                idle_s += wait;
            }
        }

        // Communication phase (collective, so every worker carries the same
        // interval in the trace). Serial ships the buckets after the
        // barrier; overlap hides them behind the straggler's final backward
        // and only the tail past the barrier is exposed.
        let step_end = if layer_bytes.is_empty() {
            barrier
        } else if sim.overlap {
            let window = sim.bwd_fraction * last_batch_time[straggler];
            let total_bytes: u64 = layer_bytes.iter().sum::<u64>().max(1);
            let layer_times: Vec<f64> = layer_bytes
                .iter()
                .map(|&b| window * b as f64 / total_bytes as f64)
                .collect();
            let outcome = overlap_schedule(layer_bytes, &layer_times, bucket_threshold, comm)?;
            let window_start = barrier - window;
            for ev in &outcome.events {
                if let ScheduleEvent::Comm { start_s, end_s, .. } = ev {
                    for w in 0..sim.workers {
                        events.push(TraceEvent {
                            worker: w,
                            step,
                            kind: EventKind::Comm,
                            start_s: window_start + start_s,
                            end_s: window_start + end_s,
                        });
                    }
                }
            }
            let exposed = (outcome.overlap_s - outcome.compute_total_s)
                .max(0.0)
                .min(outcome.comm_total_s);
            barrier + exposed
        } else {
            let outcome = overlap_schedule(
                layer_bytes,
                &vec![0.0; layer_bytes.len()],
                bucket_threshold,
                comm,
            )?;
            let dur = outcome.comm_total_s;
            for w in 0..sim.workers {
                events.push(TraceEvent {
                    worker: w,
                    step,
                    kind: EventKind::Comm,
                    start_s: barrier,
                    end_s: barrier + dur,
                });
            }
            barrier + dur
        };
        comm_exposed_s += step_end - barrier;
        t0 = step_end;
    }

    Ok(EventTrace {
        events,
        wall_s: t0,
        compute_s,
        idle_s,
        comm_exposed_s,
        tokens,
        steps,
        workers: sim.workers,
    })
}

/// CSV report over named traces:
/// `config,wall_time,tokens_per_sec,idle_fraction,comm_fraction`.
pub fn speedup_report(rows: &[(String, &EventTrace)]) -> String {
    let mut out = String::from("config,wall_time,tokens_per_sec,idle_fraction,comm_fraction\n");
    for (label, tr) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            label,
            tr.wall_s,
            tr.tokens_per_sec(),
            tr.idle_fraction(),
            tr.comm_fraction()
        ));
    }
    out
}
