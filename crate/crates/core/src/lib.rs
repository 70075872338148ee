//! Channel-aware decoupling network (CDN) for multi-turn dialogue response
//! selection, built on a small self-contained autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`numeric`]: tensors, reverse-mode autodiff, AdamW.
//! - [`data`]: vocabulary, tokenisation, dialogue encoding and corpus loaders.
//! - [`masks`]: the four channel attention masks.
//! - [`model`]: encoder, decoupling blocks, gated fusion, aggregation,
//!   BiGRU integration, scoring heads and checkpoints.
//! - [`posttrain`]: masked-token and next-utterance post-training data and losses.
//! - [`train`]: batching, learning-rate schedule and the training loop.
//! - [`metrics`]: ranking metrics (R_n@k, MAP, MRR, P@1).
//! - [`synthetic`]: seeded toy tasks that need specific channels to solve.
//! - [`cli`]: the `cdn` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod posttrain;
pub mod synthetic;
pub mod train;

pub use error::{CdnError, Result};
