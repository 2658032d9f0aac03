//! Adam with bias correction and the warmup / inverse-sqrt learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainConfig};
use crate::error::{Error, Result};

/// Per-parameter Adam moments. `t` counts only applied updates; skipped
/// (overflowed) steps leave it untouched so the schedule stays aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f32>> = params.layers().iter().map(|l| vec![0.0; l.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Learning rate at optimizer step `step` (1-based): linear warmup to
/// `peak_lr` over `warmup_steps`, then inverse square-root decay.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    assert!(step >= 1, "steps are 1-based");
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    cfg.peak_lr * (s / w).min((w / s).sqrt())
}

/// One Adam update over per-layer gradients (already normalized to the
/// per-token mean by the caller). fp32 throughout, so identical inputs give
/// bit-identical parameters.
pub fn adam_update(
    params: &mut ModelParams,
    grads: &[Vec<f32>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.layers().len() {
        return Err(Error::Shape(format!(
            "gradient layer count {} vs params {}",
            grads.len(),
            params.layers().len()
        )));
    }
    for (li, g) in grads.iter().enumerate() {
        if g.len() != params.layers()[li].len() {
            return Err(Error::Shape(format!(
                "gradient layer {li} has {} elements, expected {}",
                g.len(),
                params.layers()[li].len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite gradient element in layer {li}"
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let lr = lr as f32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (li, g) in grads.iter().enumerate() {
        let m = &mut state.m[li];
        let v = &mut state.v[li];
        let p = &mut params.layers_mut()[li];
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
