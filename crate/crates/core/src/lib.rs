//! Learned realness metric for open-ended text generation.
//!
//! A small critic scores (context, candidate) pairs built from hashed n-gram
//! features. Training maximizes the softmax-bounded probability that the
//! critic prefers the reference, interpolated by a learned data confidence
//! and regularized by a gradient penalty. At test time per-sample scores are
//! combined into a system score weighted by data and Monte Carlo dropout
//! confidence.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod featurizer;
pub mod metrics;
pub mod perception;
pub mod rng;
pub mod tinynet;
pub mod uncertainty;

pub use error::{Error, Result};
