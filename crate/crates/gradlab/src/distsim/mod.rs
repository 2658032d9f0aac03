//! Synchronous data-parallel training over in-process workers, plus a
//! discrete-event simulator for straggler idle time and communication /
//! backward overlap.
//!
//! Real multi-machine transport is out of scope: workers exchange gradients
//! through an in-memory collective with a fixed reduction order, and the
//! timing side of communication lives in [`CommModel`].

mod allreduce;
mod overlap;
mod sim;
mod train;

pub use allreduce::{all_reduce, all_reduce_half};
pub use overlap::{
    overlap_schedule, partition_buckets, Bucket, CommModel, OverlapOutcome, ScheduleEvent,
    DEFAULT_BUCKET_BYTES,
};
pub use sim::{
    simulate_epoch, speedup_report, EventKind, EventTrace, ShuffledCycle, SimParams, TraceEvent,
};
pub use train::{train_step_sync, StepStats};
