//! Gradient buckets and the communication/backward overlap schedule.
//!
//! Backward emits per-layer gradients top-down; each is appended to a
//! synchronization buffer which flushes once it holds at least
//! `threshold_bytes`, plus a remainder flush at the end. Flushes queue FIFO
//! on a single background channel. The serial baseline ships the same
//! flushes back-to-back after backward finishes, which makes overlapped
//! wall time dominate it on every input.

use serde::Serialize;

use crate::error::{Error, Result};

/// 150 MB, the default flush threshold.
pub const DEFAULT_BUCKET_BYTES: u64 = 150 * (1 << 20);

/// Cost model for one all-reduce flush: fixed latency plus ring-transfer
/// time, `latency + bytes/bandwidth * 2(W-1)/W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommModel {
    pub latency_s: f64,
    pub bandwidth_bytes_per_s: f64,
    pub workers: usize,
}

impl CommModel {
    pub fn cost(&self, bytes: u64) -> f64 {
        assert!(self.bandwidth_bytes_per_s > 0.0);
        let w = self.workers.max(1) as f64;
        let ring = 2.0 * (w - 1.0) / w;
        self.latency_s + bytes as f64 / self.bandwidth_bytes_per_s * ring
    }
}

/// One flushed bucket: the emission-order indices of the layers it carries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub index: usize,
    pub layers: Vec<usize>,
    pub bytes: u64,
}

/// Split an emission-order byte stream into flush buckets: a bucket closes
/// as soon as it holds at least `threshold_bytes`, and the remainder closes
/// at end of backward. Every layer lands in exactly one bucket.
pub fn partition_buckets(layer_bytes: &[u64], threshold_bytes: u64) -> Vec<Bucket> {
    let mut out = Vec::new();
    let mut layers = Vec::new();
    let mut bytes = 0u64;
    for (i, &b) in layer_bytes.iter().enumerate() {
        layers.push(i);
        bytes += b;
        if bytes >= threshold_bytes {
            out.push(Bucket {
                index: out.len(),
                layers: std::mem::take(&mut layers),
                bytes,
            });
            bytes = 0;
        }
    }
    if !layers.is_empty() {
        out.push(Bucket {
            index: out.len(),
            layers,
            bytes,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleEvent {
    Compute { layer: usize, start_s: f64, end_s: f64 },
    Comm { bucket: usize, start_s: f64, end_s: f64 },
}

/// Result of simulating one backward pass with bucketed synchronization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapOutcome {
    pub events: Vec<ScheduleEvent>,
    pub buckets: Vec<Bucket>,
    /// Wall time with flushes overlapping the remaining backward.
    pub overlap_s: f64,
    /// Wall time with the same flushes after backward completes.
    pub serial_s: f64,
    /// Total backward time.
    pub compute_total_s: f64,
    /// Total channel occupancy over all flushes.
    pub comm_total_s: f64,
}

/// Simulate backward emission against a single FIFO communication channel.
///
/// `layer_bytes` and `layer_times` are in emission order (top of the network
/// first) and must have equal length.
pub fn overlap_schedule(
    layer_bytes: &[u64],
    layer_times: &[f64],
    threshold_bytes: u64,
    comm: &CommModel,
) -> Result<OverlapOutcome> {
    if layer_bytes.len() != layer_times.len() {
        return Err(Error::Shape(format!(
            "{} layer sizes vs {} layer times",
            layer_bytes.len(),
            layer_times.len()
        )));
    }
    if layer_times.iter().any(|t| *t < 0.0 || !t.is_finite()) {
        return Err(Error::Data("layer times must be finite and non-negative".into()));
    }

    let buckets = partition_buckets(layer_bytes, threshold_bytes);
    let mut events = Vec::with_capacity(layer_bytes.len() + buckets.len());

    // Backward occupies one compute timeline; finish time of each layer.
    let mut finish = Vec::with_capacity(layer_times.len());
    let mut t = 0.0;
    for (i, &dt) in layer_times.iter().enumerate() {
        events.push(ScheduleEvent::Compute {
            layer: i,
            start_s: t,
            end_s: t + dt,
        });
        t += dt;
        finish.push(t);
    }
    let compute_total = t;

    // FIFO background channel: a bucket is ready when its last layer is.
    let mut chan_free = 0.0f64;
    for b in &buckets {
        let ready = b.layers.last().map_or(0.0, |&l| finish[l]);
        let start = ready.max(chan_free);
        let end = start + comm.cost(b.bytes);
        events.push(ScheduleEvent::Comm {
            bucket: b.index,
            start_s: start,
            end_s: end,
        });
        chan_free = end;
    }
    let comm_total = buckets.iter().map(|b| comm.cost(b.bytes)).sum::<f64>();
    let serial_s = compute_total + comm_total;
    // No flush starts later on the shared channel than it would when
    // serialized after backward, so overlap can never exceed serial; the min
    // only strips float fold-order noise off that bound.
    let overlap_s = compute_total.max(chan_free).min(serial_s);

    Ok(OverlapOutcome {
        events,
        buckets,
        overlap_s,
        serial_s,
        compute_total_s: compute_total,
        comm_total_s: comm_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn comm(latency: f64, bandwidth: f64) -> CommModel {
        CommModel {
            latency_s: latency,
            bandwidth_bytes_per_s: bandwidth,
            workers: 8,
        }
    }

    #[test]
    fn bucket_conservation() {
        let sizes = [10u64, 20, 5, 40, 3, 3, 3];
        let buckets = partition_buckets(&sizes, 25);
        let mut seen: Vec<usize> = buckets.iter().flat_map(|b| b.layers.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..sizes.len()).collect::<Vec<_>>());
        assert_eq!(
            buckets.iter().map(|b| b.bytes).sum::<u64>(),
            sizes.iter().sum::<u64>()
        );
        // A bucket closes exactly when it crosses the threshold.
        assert_eq!(buckets[0].layers, vec![0, 1]);
        for b in &buckets[..buckets.len() - 1] {
            assert!(b.bytes >= 25);
        }
    }

    #[test]
    fn degenerate_threshold_equals_serial() {
        let sizes = [100u64, 100, 100];
        let times = [0.1, 0.1, 0.1];
        let c = comm(1e-3, 1e6);
        let out = overlap_schedule(&sizes, &times, 10_000, &c).unwrap();
        assert_eq!(out.buckets.len(), 1);
        assert_eq!(out.overlap_s, out.serial_s);
    }

    #[test]
    fn infinitely_fast_comm_hides_entirely() {
        let sizes = [100u64, 100, 100];
        let times = [0.1, 0.2, 0.3];
        let c = comm(0.0, f64::INFINITY);
        let out = overlap_schedule(&sizes, &times, 1, &c).unwrap();
        assert!((out.overlap_s - 0.6).abs() < 1e-12);
    }

    #[test]
    fn six_equal_layers_hand_trace() {
        // Comm cost per layer equal to backward time per layer, threshold of
        // one layer: flush i becomes ready at i*tau and the channel is busy
        // back-to-back, so the last flush ends one comm slot after backward.
        let tau = 0.05;
        let bytes_per_layer = 1_000u64;
        let c = CommModel {
            latency_s: 0.0,
            bandwidth_bytes_per_s: 1_000.0 / tau * (2.0 * 7.0 / 8.0),
            workers: 8,
        };
        assert!((c.cost(bytes_per_layer) - tau).abs() < 1e-12);
        let sizes = [bytes_per_layer; 6];
        let times = [tau; 6];
        let out = overlap_schedule(&sizes, &times, bytes_per_layer, &c).unwrap();
        assert_eq!(out.buckets.len(), 6);
        assert!((out.overlap_s - 7.0 * tau).abs() < 1e-12);
        assert!((out.serial_s - 12.0 * tau).abs() < 1e-12);
        // Hand-simulated event list for the communication channel.
        let comm_events: Vec<(f64, f64)> = out
            .events
            .iter()
            .filter_map(|e| match e {
                ScheduleEvent::Comm { start_s, end_s, .. } => Some((*start_s, *end_s)),
                _ => None,
            })
            .collect();
        for (i, &(s, e)) in comm_events.iter().enumerate() {
            assert!((s - (i + 1) as f64 * tau).abs() < 1e-12);
            assert!((e - (i + 2) as f64 * tau).abs() < 1e-12);
        }
    }

    proptest! {
        /// Overlap never loses to shipping the same buckets serially.
        #[test]
        fn overlap_dominates_serial(
            layers in proptest::collection::vec((1u64..5_000_000, 0.0f64..0.2), 1..24),
            threshold in 1u64..10_000_000,
            latency in 0.0f64..0.01,
            bandwidth in 1e6f64..1e10,
            workers in 1usize..16,
        ) {
            let sizes: Vec<u64> = layers.iter().map(|&(b, _)| b).collect();
            let times: Vec<f64> = layers.iter().map(|&(_, t)| t).collect();
            let c = CommModel { latency_s: latency, bandwidth_bytes_per_s: bandwidth, workers };
            let out = overlap_schedule(&sizes, &times, threshold, &c).unwrap();
            prop_assert!(out.overlap_s <= out.serial_s + 1e-12);
        }
    }
}
