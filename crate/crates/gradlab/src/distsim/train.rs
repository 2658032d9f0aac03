//! One synchronized optimizer step over `workers x cumul` sub-batches.
//!
//! Workers run forward/backward concurrently against the same parameter
//! snapshot; each keeps its per-sub-batch gradients rather than a local
//! running sum, and the reduce folds them in global sub-batch order. That
//! ordering makes the final fp32 parameters bit-identical for every
//! (workers, cumul) split of the same batch list.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::lowprec::{self, Half, LossScaler, ScalerOutcome};
use crate::model::{
    adam_update, backward, forward, grads_in_layer_order, lr_at, AdamState, ModelParams,
    SubBatchTensors, TrainConfig,
};

use super::allreduce::{all_reduce, all_reduce_half};

/// What one synchronized step did.
#[derive(Debug, Clone, Serialize)]
pub struct StepStats {
    /// Unscaled token-sum loss over every sub-batch of the step.
    pub loss_sum: f64,
    pub token_count: u64,
    /// False when the scaler detected overflow and the update was skipped.
    pub applied: bool,
    pub overflow: bool,
    /// Loss scale used for this step's backward (1.0 in fp32 mode).
    pub scale: f32,
    /// Scaler transition, when running in fp16 mode.
    pub scaler: Option<ScalerOutcome>,
}

enum BatchGrads {
    Full(Vec<Vec<f32>>),
    Half(Vec<Vec<Half>>),
}

/// Run one synchronous data-parallel step with gradient accumulation.
///
/// `batches` holds `workers * cumul` sub-batches in global order: worker `w`
/// owns the contiguous slice `w*cumul..(w+1)*cumul`. With a scaler present,
/// gradients are stored in half precision, reduced, checked for overflow,
/// and unscaled; without one the whole path is fp32.
pub fn train_step_sync(
    params: &mut ModelParams,
    adam: &mut AdamState,
    mut scaler: Option<&mut LossScaler>,
    batches: &[&SubBatchTensors],
    workers: usize,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    if workers == 0 || batches.is_empty() {
        return Err(Error::Config("need at least one worker and one sub-batch".into()));
    }
    if !batches.len().is_multiple_of(workers) {
        return Err(Error::Config(format!(
            "{} sub-batches do not split evenly over {workers} workers",
            batches.len()
        )));
    }
    let cumul = batches.len() / workers;
    let fp16 = scaler.is_some();
    let grad_scale = scaler.as_ref().map_or(1.0, |s| s.scale());
    let layer_count = params.dims.layer_count();

    // Each worker computes its sub-batches sequentially; workers fan out in
    // parallel. Chunk-major collection preserves global sub-batch order.
    let snapshot = &*params;
    let per_worker: Vec<Result<Vec<(f64, usize, BatchGrads)>>> =
        exec::map_chunks(batches, cumul, |chunk| {
            chunk
                .iter()
                .map(|batch| {
                    let (loss, tokens, cache) = forward(snapshot, batch, cfg.label_smoothing)?;
                    let grads = grads_in_layer_order(
                        backward(&cache, snapshot, grad_scale),
                        layer_count,
                    );
                    let grads = if fp16 {
                        BatchGrads::Half(
                            grads.iter().map(|g| lowprec::round_tensor(g)).collect(),
                        )
                    } else {
                        BatchGrads::Full(grads)
                    };
                    Ok((f64::from(loss), tokens, grads))
                })
                .collect()
        });

    let mut loss_sum = 0.0f64;
    let mut token_count = 0u64;
    let mut full_sets: Vec<Vec<Vec<f32>>> = Vec::new();
    let mut half_sets: Vec<Vec<Vec<Half>>> = Vec::new();
    for worker in per_worker {
        for (loss, tokens, grads) in worker? {
            loss_sum += loss;
            token_count += tokens as u64;
            match grads {
                BatchGrads::Full(g) => full_sets.push(g),
                BatchGrads::Half(g) => half_sets.push(g),
            }
        }
    }
    if token_count == 0 {
        return Err(Error::Data("step has no non-pad target tokens".into()));
    }

    let (reduced, overflow, scaler_outcome) = if fp16 {
        let reduced_half = all_reduce_half(&half_sets)?;
        let overflow = lowprec::detect_overflow(&reduced_half);
        let outcome = scaler.as_mut().map(|s| s.step(overflow));
        if overflow {
            return Ok(StepStats {
                loss_sum,
                token_count,
                applied: false,
                overflow: true,
                scale: grad_scale,
                scaler: outcome,
            });
        }
        (
            lowprec::unscale_grads(&reduced_half, grad_scale)?,
            false,
            outcome,
        )
    } else {
        let reduced = all_reduce(&full_sets)?;
        if reduced.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Invariant("non-finite fp32 gradients".into()));
        }
        (reduced, false, None)
    };

    // Token-sum gradients become a per-token mean exactly once, here.
    let inv = token_count as f32;
    let grads: Vec<Vec<f32>> = reduced
        .into_iter()
        .map(|t| t.into_iter().map(|x| x / inv).collect())
        .collect();

    let lr = lr_at(adam.t + 1, cfg);
    adam_update(params, &grads, adam, lr, cfg)?;

    Ok(StepStats {
        loss_sum,
        token_count,
        applied: true,
        overflow,
        scale: grad_scale,
        scaler: scaler_outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth;
    use crate::batching::{make_token_budget_batches, materialize};

    fn setup(n_pairs: usize) -> (TrainConfig, Vec<SubBatchTensors>) {
        let cfg = TrainConfig {
            vocab_size: 20,
            embed_dim: 6,
            hidden_dim: 8,
            num_layers: 2,
            ..TrainConfig::default()
        };
        let corpus = synth::toy_corpus(13, n_pairs, cfg.vocab_size);
        let batches = make_token_budget_batches(&corpus, 40).unwrap();
        let tensors: Vec<SubBatchTensors> = batches
            .iter()
            .map(|b| materialize(&corpus, b).unwrap())
            .collect();
        (cfg, tensors)
    }

    fn run_split(
        cfg: &TrainConfig,
        tensors: &[SubBatchTensors],
        workers: usize,
        steps: usize,
    ) -> ModelParams {
        let refs: Vec<&SubBatchTensors> = tensors.iter().collect();
        let mut params = ModelParams::init(cfg, 99);
        let mut adam = AdamState::new(&params);
        for _ in 0..steps {
            train_step_sync(&mut params, &mut adam, None, &refs, workers, cfg).unwrap();
        }
        params
    }

    #[test]
    fn accumulation_equivalence_is_bit_exact() {
        let (cfg, tensors) = setup(120);
        let four = &tensors[..4];
        let a = run_split(&cfg, four, 1, 50); // W=1, cumul=4
        let b = run_split(&cfg, four, 4, 50); // W=4, cumul=1
        let c = run_split(&cfg, four, 2, 50); // W=2, cumul=2
        assert_eq!(a, b, "W=1/c=4 vs W=4/c=1 must be bit-identical");
        assert_eq!(a, c, "W=1/c=4 vs W=2/c=2 must be bit-identical");
    }

    #[test]
    fn concatenated_batch_matches_accumulated_batches() {
        // Accumulating over the four sub-batches equals training on one
        // concatenated batch up to gradient summation order; with the global
        // fold the loss and token counts agree exactly and the parameters
        // agree to fp32 roundoff.
        let (cfg, tensors) = setup(120);
        let four = &tensors[..4];
        let split = run_split(&cfg, four, 1, 1);

        let pairs: Vec<(&[u32], &[u32])> = four
            .iter()
            .flat_map(|t| {
                (0..t.num_sentences).map(move |i| {
                    (
                        &t.src[i * t.max_src_len..i * t.max_src_len + t.src_lens[i]],
                        &t.tgt[i * t.max_tgt_len..i * t.max_tgt_len + t.tgt_lens[i]],
                    )
                })
            })
            .collect();
        let merged = SubBatchTensors::from_pairs(&pairs);
        let joint = run_split(&cfg, std::slice::from_ref(&merged), 1, 1);

        for (a, b) in split.layers().iter().zip(joint.layers()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn fp16_overflow_skips_update_and_halves_scale() {
        let (cfg, tensors) = setup(40);
        let mut params = ModelParams::init(&cfg, 7);
        let before = params.clone();
        let mut adam = AdamState::new(&params);
        // A scale at the cap forces half-precision overflow in backward.
        let mut scaler = LossScaler::with_scale((2.0f32).powi(24));
        let refs: Vec<&SubBatchTensors> = tensors[..2].iter().collect();
        let stats = train_step_sync(
            &mut params,
            &mut adam,
            Some(&mut scaler),
            &refs,
            1,
            &cfg,
        )
        .unwrap();
        assert!(stats.overflow);
        assert!(!stats.applied);
        assert_eq!(params, before, "skipped update must not touch params");
        assert_eq!(adam.t, 0);
        assert_eq!(scaler.scale(), (2.0f32).powi(23));
    }

    #[test]
    fn fp16_path_tracks_fp32_path() {
        let (cfg, tensors) = setup(60);
        let two: Vec<&SubBatchTensors> = tensors[..2].iter().collect();

        let mut p32 = ModelParams::init(&cfg, 5);
        let mut a32 = AdamState::new(&p32);
        let mut p16 = p32.clone();
        let mut a16 = AdamState::new(&p16);
        let mut scaler = LossScaler::with_scale(128.0);

        for _ in 0..5 {
            train_step_sync(&mut p32, &mut a32, None, &two, 2, &cfg).unwrap();
            let s = train_step_sync(&mut p16, &mut a16, Some(&mut scaler), &two, 2, &cfg).unwrap();
            assert!(s.applied);
        }
        let flat32: Vec<f32> = p32.layers().iter().flatten().copied().collect();
        let flat16: Vec<f32> = p16.layers().iter().flatten().copied().collect();
        let max_diff = flat32
            .iter()
            .zip(&flat16)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        // Half-precision gradient storage perturbs each step by at most the
        // half unit roundoff; five Adam steps stay close.
        assert!(max_diff < 2e-3, "max param divergence {max_diff}");
    }

    #[test]
    fn uneven_split_is_rejected() {
        let (cfg, tensors) = setup(40);
        let mut params = ModelParams::init(&cfg, 1);
        let mut adam = AdamState::new(&params);
        let refs: Vec<&SubBatchTensors> = tensors[..3].iter().collect();
        let err = train_step_sync(&mut params, &mut adam, None, &refs, 2, &cfg);
        assert!(err.is_err());
    }
}
