//! Data-parallel fan-out vs serial-loop baselines.
//!
//! Each group benchmarks the same work twice: once through the library path
//! (rayon under the default `parallel` feature) and once as a hand-rolled
//! sequential loop over the public single-item operations. Running the suite
//! with `--no-default-features` measures the sequential fallback under the
//! same benchmark ids, so `cargo bench` / `cargo bench --no-default-features`
//! gives the cross-feature comparison via criterion's saved baselines.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gradlab::batching::{make_token_budget_batches, materialize};
use gradlab::corpus::synth;
use gradlab::datafilter::score_pairs;
use gradlab::distsim::train_step_sync;
use gradlab::model::{
    backward, finite_diff_grad, forward, grads_in_layer_order, AdamState, ModelParams,
    SubBatchTensors, TrainConfig,
};

fn cfg() -> TrainConfig {
    TrainConfig {
        vocab_size: 40,
        embed_dim: 16,
        hidden_dim: 32,
        num_layers: 4,
        ..TrainConfig::default()
    }
}

fn bench_worker_gradients(c: &mut Criterion) {
    let cfg = cfg();
    let corpus = synth::toy_corpus(1, 2000, cfg.vocab_size);
    let batches = make_token_budget_batches(&corpus, 120).unwrap();
    let tensors: Vec<SubBatchTensors> = batches
        .iter()
        .take(8)
        .map(|b| materialize(&corpus, b).unwrap())
        .collect();
    let refs: Vec<&SubBatchTensors> = tensors.iter().collect();
    let params = ModelParams::init(&cfg, 7);

    let mut group = c.benchmark_group("worker_gradients");
    group.sample_size(20);
    group.bench_function("train_step_fanout_w8", |b| {
        b.iter(|| {
            let mut p = params.clone();
            let mut adam = AdamState::new(&p);
            train_step_sync(&mut p, &mut adam, None, &refs, 8, &cfg).unwrap();
            black_box(p);
        })
    });
    group.bench_function("serial_loop_w8", |b| {
        b.iter(|| {
            // The same gradient work, one sub-batch at a time.
            let mut acc: Vec<Vec<f32>> = Vec::new();
            for t in &refs {
                let (_, _, cache) = forward(&params, t, cfg.label_smoothing).unwrap();
                let g = grads_in_layer_order(
                    backward(&cache, &params, 1.0),
                    params.dims.layer_count(),
                );
                if acc.is_empty() {
                    acc = g;
                } else {
                    for (a, l) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.iter_mut().zip(l) {
                            *x += y;
                        }
                    }
                }
            }
            black_box(acc);
        })
    });
    group.finish();
}

fn bench_pair_scoring(c: &mut Criterion) {
    let cfg = cfg();
    let corpus = synth::toy_corpus(2, 400, cfg.vocab_size);
    let params = ModelParams::init(&cfg, 3);

    let mut group = c.benchmark_group("pair_scoring");
    group.sample_size(20);
    group.bench_function("score_pairs_fanout", |b| {
        b.iter(|| black_box(score_pairs(&params, &corpus).unwrap()))
    });
    group.bench_function("serial_loop", |b| {
        b.iter(|| {
            let scores: Vec<f64> = corpus
                .iter()
                .map(|p| {
                    let t = SubBatchTensors::from_pairs(&[(p.src.as_slice(), p.tgt.as_slice())]);
                    let (loss, tokens, _) = forward(&params, &t, 0.0).unwrap();
                    -f64::from(loss) / tokens as f64
                })
                .collect();
            black_box(scores);
        })
    });
    group.finish();
}

fn bench_finite_differences(c: &mut Criterion) {
    let cfg = TrainConfig {
        vocab_size: 11,
        embed_dim: 4,
        hidden_dim: 6,
        num_layers: 2,
        ..TrainConfig::default()
    };
    let corpus = synth::toy_corpus(3, 6, cfg.vocab_size);
    let pairs: Vec<(&[u32], &[u32])> = corpus
        .iter()
        .map(|p| (p.src.as_slice(), p.tgt.as_slice()))
        .collect();
    let batch = SubBatchTensors::from_pairs(&pairs);
    let params = ModelParams::init(&cfg, 5);

    let mut group = c.benchmark_group("finite_differences");
    group.sample_size(10);
    group.bench_function("coordinate_sweep", |b| {
        b.iter(|| black_box(finite_diff_grad(&params, &batch, 0.1, 1e-5).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_worker_gradients,
    bench_pair_scoring,
    bench_finite_differences
);
criterion_main!(benches);
