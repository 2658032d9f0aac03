//! Desk-scale engine for the mechanics of large-batch distributed training
//! of sequence models.
//!
//! The crate houses, at toy scale, the pieces that make scaled-up training
//! fast: emulated binary16 gradients with dynamic loss scaling, gradient
//! accumulation with exact equivalence across worker/accumulation splits,
//! synchronous in-process workers with deterministic all-reduce, bucketed
//! communication overlapped with the backward pass, timing-aware sub-batch
//! construction, corpus filtering/mixing, and a discrete-event simulator for
//! straggler-induced idle time.
//!
//! Data-parallel inner loops run on rayon when the default `parallel`
//! feature is enabled and fall back to sequential iterators without it;
//! both paths produce bit-identical results.

pub mod batching;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod datafilter;
pub mod distsim;
pub mod error;
pub mod lowprec;
pub mod model;
pub mod rng;

mod exec;

pub use error::{Error, Result};
