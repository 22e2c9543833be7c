//! Context extension for embedding models.
//!
//! A small transformer encoder with absolute or rotary positions, a set of
//! plug-and-play strategies that let it read inputs longer than its training
//! context, further tuning of absolute position tables, synthetic long-input
//! retrieval tasks and an evaluation harness.

pub mod checkpoint;
pub mod chunking;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod position;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod tuner;

pub use error::{Error, Result};
