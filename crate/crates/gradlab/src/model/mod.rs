//! Toy layered sequence model: mean-pooled source embeddings, a stack of
//! ReLU feed-forward layers, and a projection to per-target-position logits
//! under a label-smoothed negative log-likelihood.
//!
//! The model is deliberately small and attention-free so gradients stay
//! checkable against finite differences, while keeping the layered structure
//! whose backward pass streams per-layer gradients in reverse order, which
//! is what the bucketed-communication scheduler consumes.
//!
//! Parameters and emitted gradients are fp32; the arithmetic inside forward
//! and backward runs in f64 so the fp32 results are accurate to well below
//! any test tolerance.

mod checkpoint;
mod optim;

pub use checkpoint::Checkpoint;
pub use optim::{adam_update, lr_at, AdamState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::substream;
use rand::Rng;

/// Reserved token id used for padding; never a real token.
pub const PAD_ID: u32 = 0;

/// Training hyperparameters and model dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            vocab_size: 50,
            embed_dim: 16,
            hidden_dim: 32,
            num_layers: 6,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
            peak_lr: 5e-4,
            warmup_steps: 4000,
            label_smoothing: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must be in [0,1)".into()));
        }
        if self.peak_lr <= 0.0 || self.warmup_steps == 0 {
            return Err(Error::Config("peak_lr and warmup_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Model shape, kept next to the raw parameter storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        ModelDims {
            vocab: cfg.vocab_size,
            embed: cfg.embed_dim,
            hidden: cfg.hidden_dim,
            layers: cfg.num_layers,
        }
    }

    /// Number of parameter tensors: embedding, feed-forward stack, projection.
    pub fn layer_count(&self) -> usize {
        self.layers + 2
    }

    /// Input width of feed-forward layer `i` (0-based within the stack).
    fn ff_in(&self, i: usize) -> usize {
        if i == 0 {
            self.embed
        } else {
            self.hidden
        }
    }

    /// Input width of the final projection.
    fn proj_in(&self) -> usize {
        if self.layers == 0 {
            self.embed
        } else {
            self.hidden
        }
    }

    /// Element count of parameter tensor `i` in layer order.
    pub fn layer_len(&self, i: usize) -> usize {
        if i == 0 {
            self.vocab * self.embed
        } else if i <= self.layers {
            self.ff_in(i - 1) * self.hidden + self.hidden
        } else {
            self.proj_in() * self.vocab + self.vocab
        }
    }

    pub fn layer_name(&self, i: usize) -> String {
        if i == 0 {
            "embed".to_string()
        } else if i <= self.layers {
            format!("ff{i}")
        } else {
            "proj".to_string()
        }
    }

    pub fn total_params(&self) -> usize {
        (0..self.layer_count()).map(|i| self.layer_len(i)).sum()
    }
}

/// Ordered, named parameter tensors. Layer order defines backward emission
/// order: the projection's gradient is produced first, the embedding's last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    layers: Vec<Vec<f32>>,
}

impl ModelParams {
    /// Deterministic initialization: same config and seed, same bits.
    pub fn init(cfg: &TrainConfig, seed: u64) -> Self {
        let dims = ModelDims::from_config(cfg);
        let mut rng = substream(seed, "init");
        let layers = (0..dims.layer_count())
            .map(|i| {
                let fan_in = if i == 0 {
                    dims.embed
                } else if i <= dims.layers {
                    dims.ff_in(i - 1)
                } else {
                    dims.proj_in()
                };
                let r = 1.0 / (fan_in as f32).sqrt();
                (0..dims.layer_len(i))
                    .map(|_| rng.random_range(-r..r))
                    .collect()
            })
            .collect();
        ModelParams { dims, layers }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let layers = (0..dims.layer_count())
            .map(|i| vec![0.0; dims.layer_len(i)])
            .collect();
        ModelParams { dims, layers }
    }

    pub fn layers(&self) -> &[Vec<f32>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.layers
    }

    /// Widened copy used by the f64 numeric core.
    pub fn layers_f64(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| l.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    /// Per-layer payload in bytes as shipped over the wire: 2 bytes per
    /// element in half precision, 4 in fp32.
    pub fn layer_bytes(&self, i: usize, half: bool) -> u64 {
        (self.dims.layer_len(i) * if half { 2 } else { 4 }) as u64
    }

    pub fn layer_bytes_all(&self, half: bool) -> Vec<u64> {
        (0..self.dims.layer_count())
            .map(|i| self.layer_bytes(i, half))
            .collect()
    }
}

/// One padded sub-batch, ready for forward/backward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBatchTensors {
    /// Row-major `num_sentences x max_src_len`, padded with [`PAD_ID`].
    pub src: Vec<u32>,
    /// Row-major `num_sentences x max_tgt_len`, padded with [`PAD_ID`].
    pub tgt: Vec<u32>,
    pub src_lens: Vec<usize>,
    pub tgt_lens: Vec<usize>,
    pub num_sentences: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl SubBatchTensors {
    pub fn from_pairs(pairs: &[(&[u32], &[u32])]) -> Self {
        let n = pairs.len();
        let max_src = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
        let max_tgt = pairs.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
        let mut src = vec![PAD_ID; n * max_src];
        let mut tgt = vec![PAD_ID; n * max_tgt];
        let mut src_lens = Vec::with_capacity(n);
        let mut tgt_lens = Vec::with_capacity(n);
        for (i, (s, t)) in pairs.iter().enumerate() {
            src[i * max_src..i * max_src + s.len()].copy_from_slice(s);
            tgt[i * max_tgt..i * max_tgt + t.len()].copy_from_slice(t);
            src_lens.push(s.len());
            tgt_lens.push(t.len());
        }
        SubBatchTensors {
            src,
            tgt,
            src_lens,
            tgt_lens,
            num_sentences: n,
            max_src_len: max_src,
            max_tgt_len: max_tgt,
        }
    }

    /// Target tokens excluding padding.
    pub fn tgt_tokens_nopad(&self) -> usize {
        self.tgt_lens.iter().sum()
    }

    fn src_row(&self, i: usize) -> &[u32] {
        &self.src[i * self.max_src_len..i * self.max_src_len + self.src_lens[i]]
    }

    fn tgt_row(&self, i: usize) -> &[u32] {
        &self.tgt[i * self.max_tgt_len..i * self.max_tgt_len + self.tgt_lens[i]]
    }
}

/// Activations saved by [`forward`] for the backward pass.
pub struct Cache {
    eps: f64,
    sentences: Vec<SentenceCache>,
}

struct SentenceCache {
    src_ids: Vec<u32>,
    tgt_len: usize,
    /// Distinct target tokens with multiplicities, ascending.
    tgt_counts: Vec<(u32, usize)>,
    /// h0 (pooled embedding), then post-ReLU activation of each ff layer.
    acts: Vec<Vec<f64>>,
    /// Softmax over the vocabulary.
    probs: Vec<f64>,
}

/// One layer's gradient, tagged with its position in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub layer: usize,
    pub data: Vec<f32>,
}

/// Reorder an emission-order gradient stream into layer order.
pub fn grads_in_layer_order(stream: Vec<LayerGrad>, layer_count: usize) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = vec![Vec::new(); layer_count];
    for g in stream {
        out[g.layer] = g.data;
    }
    out
}

fn check_tokens(batch: &SubBatchTensors, vocab: usize) -> Result<()> {
    if batch
        .src
        .iter()
        .chain(batch.tgt.iter())
        .any(|&t| (t as usize) >= vocab)
    {
        return Err(Error::Data(format!("token id out of range (vocab {vocab})")));
    }
    Ok(())
}

fn relu_vec(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// y = W x + b with W row-major `out x in`, packed as `w ++ b`.
fn linear(layer: &[f64], x: &[f64], in_dim: usize, out_dim: usize) -> Vec<f64> {
    let (w, b) = layer.split_at(in_dim * out_dim);
    (0..out_dim)
        .map(|o| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            acc
        })
        .collect()
}

struct SentenceForward {
    loss: f64,
    cache: Option<SentenceCache>,
}

fn forward_sentence(
    dims: &ModelDims,
    layers: &[Vec<f64>],
    src: &[u32],
    tgt: &[u32],
    eps: f64,
    want_cache: bool,
) -> SentenceForward {
    let v = dims.vocab;

    // Mean-pool the true-length source embeddings.
    let mut h = vec![0.0f64; dims.embed];
    for &tok in src {
        let row = &layers[0][tok as usize * dims.embed..(tok as usize + 1) * dims.embed];
        for (hi, ei) in h.iter_mut().zip(row) {
            *hi += ei;
        }
    }
    let inv = 1.0 / src.len() as f64;
    for hi in h.iter_mut() {
        *hi *= inv;
    }

    let mut acts = Vec::with_capacity(dims.layers + 1);
    if want_cache {
        acts.push(h.clone());
    }
    for l in 0..dims.layers {
        let mut next = linear(&layers[1 + l], &h, dims.ff_in(l), dims.hidden);
        relu_vec(&mut next);
        if want_cache {
            acts.push(next.clone());
        }
        h = next;
    }

    let logits = linear(&layers[dims.layers + 1], &h, dims.proj_in(), v);

    // Log-softmax shared by every target position of the sentence.
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum_exp = 0.0;
    for &l in &logits {
        sum_exp += (l - max).exp();
    }
    let lse = max + sum_exp.ln();
    let sum_lp: f64 = logits.iter().map(|&l| l - lse).sum();

    let mut loss = 0.0;
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for &tok in tgt {
        let lp_t = logits[tok as usize] - lse;
        loss += -((1.0 - eps) * lp_t + eps / v as f64 * sum_lp);
        match counts.binary_search_by_key(&tok, |&(t, _)| t) {
            Ok(i) => counts[i].1 += 1,
            Err(i) => counts.insert(i, (tok, 1)),
        }
    }

    let cache = want_cache.then(|| SentenceCache {
        src_ids: src.to_vec(),
        tgt_len: tgt.len(),
        tgt_counts: counts,
        acts,
        probs: logits.iter().map(|&l| (l - lse).exp()).collect(),
    });

    SentenceForward { loss, cache }
}

/// Run the model over a sub-batch.
///
/// Returns the token-sum label-smoothed negative log-likelihood over non-pad
/// target tokens, the non-pad token count, and the activation cache for
/// [`backward`].
pub fn forward(
    params: &ModelParams,
    batch: &SubBatchTensors,
    label_smoothing: f64,
) -> Result<(f32, usize, Cache)> {
    check_tokens(batch, params.dims.vocab)?;
    let layers = params.layers_f64();
    let dims = params.dims;
    let mut loss = 0.0f64;
    let mut sentences = Vec::with_capacity(batch.num_sentences);
    for i in 0..batch.num_sentences {
        let fw = forward_sentence(
            &dims,
            &layers,
            batch.src_row(i),
            batch.tgt_row(i),
            label_smoothing,
            true,
        );
        loss += fw.loss;
        sentences.push(fw.cache.expect("cache requested"));
    }
    let token_count = batch.tgt_tokens_nopad();
    Ok((
        loss as f32,
        token_count,
        Cache {
            eps: label_smoothing,
            sentences,
        },
    ))
}

/// Loss only, on an arbitrary (possibly perturbed) f64 parameter set.
/// This is the path the finite-difference oracle drives.
fn loss_on_layers(
    dims: &ModelDims,
    layers: &[Vec<f64>],
    batch: &SubBatchTensors,
    eps: f64,
) -> f64 {
    let mut loss = 0.0;
    for i in 0..batch.num_sentences {
        loss += forward_sentence(dims, layers, batch.src_row(i), batch.tgt_row(i), eps, false).loss;
    }
    loss
}

/// Gradients of `grad_scale * loss_sum`, emitted one layer at a time in
/// reverse layer order (projection first, embedding last).
///
/// Gradients are of the token-sum loss; normalization by the global token
/// count happens after the all-reduce.
pub fn backward(cache: &Cache, params: &ModelParams, grad_scale: f32) -> Vec<LayerGrad> {
    let dims = params.dims;
    let layers = params.layers_f64();
    let v = dims.vocab;
    let gs = f64::from(grad_scale);

    let mut grads: Vec<Vec<f64>> = (0..dims.layer_count())
        .map(|i| vec![0.0; dims.layer_len(i)])
        .collect();

    for sent in &cache.sentences {
        if sent.tgt_len == 0 {
            continue;
        }
        let n = sent.tgt_len as f64;

        // d loss / d logits, all target positions of the sentence at once.
        let mut dlogits: Vec<f64> = sent
            .probs
            .iter()
            .map(|&p| gs * (n * p - n * cache.eps / v as f64))
            .collect();
        for &(tok, cnt) in &sent.tgt_counts {
            dlogits[tok as usize] -= gs * (1.0 - cache.eps) * cnt as f64;
        }

        // Projection layer.
        let h_top = sent.acts.last().expect("pooled activation");
        let proj_idx = dims.layers + 1;
        let in_dim = dims.proj_in();
        let mut dh = vec![0.0f64; in_dim];
        {
            let g = &mut grads[proj_idx];
            let w = &layers[proj_idx][..in_dim * v];
            for o in 0..v {
                let d = dlogits[o];
                let grow = &mut g[o * in_dim..(o + 1) * in_dim];
                for (gi, hi) in grow.iter_mut().zip(h_top) {
                    *gi += d * hi;
                }
                g[in_dim * v + o] += d;
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (dhi, wi) in dh.iter_mut().zip(wrow) {
                    *dhi += d * wi;
                }
            }
        }

        // Feed-forward stack, top to bottom.
        for l in (0..dims.layers).rev() {
            let in_dim = dims.ff_in(l);
            let out_dim = dims.hidden;
            let a_out = &sent.acts[l + 1];
            let a_in = &sent.acts[l];
            // ReLU gate: post-activation > 0 means the unit was active.
            let dz: Vec<f64> = dh
                .iter()
                .zip(a_out)
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect();
            let mut dh_prev = vec![0.0f64; in_dim];
            let g = &mut grads[1 + l];
            let w = &layers[1 + l][..in_dim * out_dim];
            for o in 0..out_dim {
                let d = dz[o];
                if d != 0.0 {
                    let grow = &mut g[o * in_dim..(o + 1) * in_dim];
                    for (gi, ai) in grow.iter_mut().zip(a_in) {
                        *gi += d * ai;
                    }
                    let wrow = &w[o * in_dim..(o + 1) * in_dim];
                    for (pi, wi) in dh_prev.iter_mut().zip(wrow) {
                        *pi += d * wi;
                    }
                }
                g[in_dim * out_dim + o] += d;
            }
            dh = dh_prev;
        }

        // Embedding: the pooled mean spreads the gradient evenly over the
        // true-length source tokens.
        let inv = 1.0 / sent.src_ids.len() as f64;
        let g = &mut grads[0];
        for &tok in &sent.src_ids {
            let row = &mut g[tok as usize * dims.embed..(tok as usize + 1) * dims.embed];
            for (gi, di) in row.iter_mut().zip(&dh) {
                *gi += di * inv;
            }
        }
    }

    // Emit in reverse layer order, rounding to fp32 at the boundary.
    (0..dims.layer_count())
        .rev()
        .map(|i| LayerGrad {
            layer: i,
            data: grads[i].iter().map(|&x| x as f32).collect(),
        })
        .collect()
}

/// Label-smoothed negative log-likelihood of one position.
///
/// `log_probs` must be a valid log-distribution (logsumexp == 0).
pub fn label_smoothed_nll(log_probs: &[f32], target: usize, eps: f32) -> Result<f32> {
    if target >= log_probs.len() {
        return Err(Error::Data(format!(
            "target {target} out of range for vocab {}",
            log_probs.len()
        )));
    }
    debug_assert!(
        {
            let lse: f64 = log_probs
                .iter()
                .map(|&l| f64::from(l).exp())
                .sum::<f64>()
                .ln();
            lse.abs() < 1e-5
        },
        "log_probs is not a normalized log-distribution"
    );
    let v = log_probs.len() as f64;
    let sum_lp: f64 = log_probs.iter().map(|&l| f64::from(l)).sum();
    let eps = f64::from(eps);
    let nll = -((1.0 - eps) * f64::from(log_probs[target]) + eps / v * sum_lp);
    Ok(nll as f32)
}

/// Central-difference gradient of the token-sum loss, per coordinate.
///
/// Runs entirely in f64 so it can serve as an oracle for [`backward`] at
/// tight tolerances; it only ever evaluates the forward loss.
pub fn finite_diff_grad(
    params: &ModelParams,
    batch: &SubBatchTensors,
    label_smoothing: f64,
    h: f64,
) -> Result<Vec<Vec<f32>>> {
    assert!(h > 0.0);
    check_tokens(batch, params.dims.vocab)?;
    let dims = params.dims;
    let base = params.layers_f64();
    let out = (0..dims.layer_count())
        .map(|li| {
            exec::map_indices(dims.layer_len(li), |ci| {
                let mut layers = base.clone();
                layers[li][ci] = base[li][ci] + h;
                let up = loss_on_layers(&dims, &layers, batch, label_smoothing);
                layers[li][ci] = base[li][ci] - h;
                let down = loss_on_layers(&dims, &layers, batch, label_smoothing);
                ((up - down) / (2.0 * h)) as f32
            })
        })
        .collect();
    Ok(out)
}
