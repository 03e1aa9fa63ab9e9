//! Compressed embedding layers for recommendation models.
//!
//! The crate trains GMF, NeuMF and item-to-item regressors whose embedding
//! tables are one of: a full table, a low-rank factorization, post-training
//! scalar quantization, differentiable product quantization (DPQ), or
//! multi-granular quantized embeddings (MGQE), where frequency tiers of the
//! vocabulary get different code capacities. Frozen models export to a
//! bit-packed serving format.

pub mod codec;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod param;
pub mod train;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testing;
