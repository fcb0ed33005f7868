//! Paired benchmark harness for measuring how much answer and executable
//! accuracy small language models lose when their output is forced into a
//! structured format.
//!
//! The pipeline runs fixed task instances ([`taskgen`]) through
//! interchangeable output interfaces ([`modes`]) and generation backends
//! ([`backend`]), then scores every completion ([`validate`], [`checkers`])
//! and aggregates paired comparisons with bootstrap intervals
//! ([`metrics`]). [`harness`] ties the stages together around JSONL record
//! files.

// `!(x > 0.0)` style range checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod checkers;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod modes;
pub mod taskgen;
pub mod validate;

pub use error::{Error, Result};
