//! Multi-granular transformer for multimodal motion prediction.
//!
//! The pipeline runs scene tokenization at several granularities, motion-aware
//! context search, a local-attention transformer encoder with future state
//! enhancement, and an intention-query decoder with Gaussian mixture heads.
//! Everything trains on synthetic driving scenarios whose futures are known
//! in closed form.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod context_search;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scene;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
