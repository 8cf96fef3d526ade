//! Deterministic federated-learning simulator.
//!
//! The crate runs synchronous FL rounds over non-IID collaborator shards of a
//! synthetic nested-region segmentation task and compares server-side
//! aggregation strategies, collaborator-selection policies and round-level
//! hyperparameter schedules.
//!
//! Results are a pure function of the experiment config: every random draw
//! comes from a stream keyed by the experiment seed and the draw's role, and
//! all reductions run in collaborator-id order, so the worker count never
//! changes a single bit of output.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod engine;
pub mod error;
pub mod hyper;
pub mod metrics;
pub mod numerics;
pub mod partition;
pub mod rng;
pub mod selection;
pub mod synthtask;

pub use error::{FedError, Result};
