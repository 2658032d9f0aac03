//! Dynamic loss-scale state machine.

use serde::{Deserialize, Serialize};

/// Loss-scale factor plus overflow bookkeeping.
///
/// The scale stays a power of two inside `[min_scale, max_scale]`. An
/// overflow halves it and skips the pending optimizer update; a run of
/// `growth_interval` clean updates doubles it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossScaler {
    scale: f32,
    clean_updates: u32,
    growth_interval: u32,
    backoff_factor: f32,
    growth_factor: f32,
    min_scale: f32,
    max_scale: f32,
}

/// What one scaler step decided, for the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalerOutcome {
    /// Whether the optimizer should apply this update.
    pub apply_update: bool,
    pub old_scale: f32,
    pub new_scale: f32,
    /// "ok", "overflow", or "growth".
    pub reason: &'static str,
}

impl Default for LossScaler {
    fn default() -> Self {
        // Initial scale 2^7 sits safely below overflow for early-training
        // losses and grows to a useful level within a few thousand updates.
        LossScaler::new(
            (2.0f32).powi(7),
            2000,
            0.5,
            2.0,
            (2.0f32).powi(-5),
            (2.0f32).powi(24),
        )
    }
}

impl LossScaler {
    pub fn new(
        initial_scale: f32,
        growth_interval: u32,
        backoff_factor: f32,
        growth_factor: f32,
        min_scale: f32,
        max_scale: f32,
    ) -> Self {
        assert!(initial_scale > 0.0 && min_scale > 0.0 && max_scale >= min_scale);
        assert!(initial_scale.log2().fract() == 0.0, "scale must be a power of two");
        LossScaler {
            scale: initial_scale.clamp(min_scale, max_scale),
            clean_updates: 0,
            growth_interval,
            backoff_factor,
            growth_factor,
            min_scale,
            max_scale,
        }
    }

    /// Default policy with a specific starting scale.
    pub fn with_scale(initial_scale: f32) -> Self {
        LossScaler::new(
            initial_scale,
            2000,
            0.5,
            2.0,
            (2.0f32).powi(-5),
            (2.0f32).powi(24),
        )
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn clean_updates(&self) -> u32 {
        self.clean_updates
    }

    /// Advance the state machine after one synchronized gradient check.
    ///
    /// On overflow the scale is halved (bounded below) and the update is
    /// skipped; otherwise the clean counter advances and the scale doubles
    /// (bounded above) once `growth_interval` clean updates accumulate. The
    /// clean counter resets both on overflow and on growth.
    pub fn step(&mut self, overflow: bool) -> ScalerOutcome {
        let old_scale = self.scale;
        if overflow {
            self.scale = (self.scale * self.backoff_factor).max(self.min_scale);
            self.clean_updates = 0;
            return ScalerOutcome {
                apply_update: false,
                old_scale,
                new_scale: self.scale,
                reason: "overflow",
            };
        }
        self.clean_updates += 1;
        if self.clean_updates >= self.growth_interval {
            self.scale = (self.scale * self.growth_factor).min(self.max_scale);
            self.clean_updates = 0;
            return ScalerOutcome {
                apply_update: true,
                old_scale,
                new_scale: self.scale,
                reason: "growth",
            };
        }
        ScalerOutcome {
            apply_update: true,
            old_scale,
            new_scale: self.scale,
            reason: "ok",
        }
    }
}
