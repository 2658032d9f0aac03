//! Software emulation of IEEE-754 binary16 plus dynamic loss scaling.
//!
//! Gradients are stored as 16-bit floats during the emulated mixed-precision
//! path; everything else (weights, optimizer state, loss) stays in fp32. The
//! scaler keeps gradients inside the representable half range: it multiplies
//! the loss by a power of two, halves the factor whenever an overflow is
//! detected (skipping that update), and doubles it again after a fixed run of
//! clean updates.

mod binary16;
mod scaler;

pub use binary16::Half;
pub use scaler::{LossScaler, ScalerOutcome};

use crate::error::{Error, Result};

/// True iff any element of any tensor is Inf or NaN.
pub fn detect_overflow(grads: &[Vec<Half>]) -> bool {
    grads.iter().any(|t| t.iter().any(|h| !h.is_finite()))
}

/// Multiply a finite loss by the current scale factor.
pub fn scale_loss(loss: f32, scaler: &LossScaler) -> f32 {
    loss * scaler.scale()
}

/// Widen half gradients to fp32 and divide out the loss scale.
///
/// Callers are expected to run [`detect_overflow`] first; a non-finite element
/// here means that contract was skipped and is reported as an error.
pub fn unscale_grads(grads: &[Vec<Half>], scale: f32) -> Result<Vec<Vec<f32>>> {
    assert!(scale > 0.0, "scale must be positive");
    grads
        .iter()
        .map(|t| {
            t.iter()
                .map(|h| {
                    let x = h.to_f32();
                    if x.is_finite() {
                        Ok(x / scale)
                    } else {
                        Err(Error::Invariant(
                            "unscale_grads on overflow-contaminated input".into(),
                        ))
                    }
                })
                .collect()
        })
        .collect()
}

/// Round an fp32 tensor elementwise into half storage.
pub fn round_tensor(t: &[f32]) -> Vec<Half> {
    t.iter().map(|&x| Half::from_f32(x)).collect()
}

/// Widen a half tensor back to fp32 (exact).
pub fn widen_tensor(t: &[Half]) -> Vec<f32> {
    t.iter().map(|h| h.to_f32()).collect()
}
