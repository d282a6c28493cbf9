//! Scene-text aware cross-modal video retrieval.
//!
//! Videos are encoded from space-time patches, OCR text tracks are encoded
//! from their geometry/time descriptor and their recognized word, and both
//! are fused with multi-head self-attention into one normalized embedding.
//! Sentence queries are encoded separately and matched by cosine similarity.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod corpus;
pub mod encoders;
pub mod evaluation;
pub mod fusion;
pub mod training;
pub mod nn;

mod error;

pub use error::{Error, Result};
