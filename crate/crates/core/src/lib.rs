//! Dialogue sentence embeddings learned by contrasting consecutive utterances.
//!
//! The crate is organized bottom-up:
//!
//! - [`corpus`]: dialogue data model, JSON Lines ingestion, hashing tokenizer,
//!   and a synthetic topic-structured corpus generator.
//! - [`pairs`]: positive-pair construction (consecutive, multi-utterance
//!   queries, combined, dropout self-pairs, explicit pair files).
//! - [`encoder`]: embedding-bag backbone with a two-layer contrastive head,
//!   forward tapes and exact backward passes.
//! - [`loss`]: hard-negative-weighted symmetric contrastive loss and its
//!   gradient, plus an unweighted reference implementation.
//! - [`trainer`]: batching, Adam with two learning-rate groups, checkpoints.
//! - [`eval`]: prototypical classification, out-of-scope detection, response
//!   ranking, NLI probe, action-prediction probe and F1 metrics.
//! - [`cli`]: run configuration, the epoch study and the `dse` command surface.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod pairs;
pub mod rng;
pub mod trainer;

pub use error::{DseError, Result};
