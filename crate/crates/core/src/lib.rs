//! Goal-oriented communication simulation toolkit.
//!
//! A deterministic discrete-event kernel plus models for timing metrics
//! (latency, age of information, value of information), push/pull
//! scheduling, remote control over noisy channels, over-the-air
//! computation, massive acknowledgment feedback coding and batched
//! early-exit edge inference.

// negated comparisons reject NaN parameters along with out-of-range ones
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod channels;
pub mod edge_batch;
pub mod error;
pub mod experiment;
pub mod feedback_codec;
pub mod policies;
pub mod processes;
pub mod remote_mdp;
pub mod simkernel;
pub mod timing_metrics;

pub use error::{Error, Result};
