//! Conversational item-set curation.
//!
//! The crate turns curated item collections (playlists) into synthetic
//! multi-turn curation conversations and trains a conversational retriever on
//! them:
//!
//! - [`corpus`]: items, typed collections, the line-delimited corpus format and
//!   a deterministic fixture generator.
//! - [`embedder`]: hashing tokenizer, a bag-of-embeddings dual encoder trained
//!   with an in-batch contrastive loss, and an exact cosine index.
//! - [`seqgen`]: the biased random walk over collection embeddings that yields
//!   per-turn slates.
//! - [`uttgen`]: system-response templates, dialog inpainting protocol,
//!   templated user utterances and the post-generation filters.
//! - [`crs`]: query construction from conversation history, augmentation,
//!   training with checkpoint selection and retrieval.
//! - [`eval`]: turn-level benchmark examples, Hits@k, BM25 and the
//!   experiment runners (baselines, ablations, scaling sweeps).
//! - [`interactive`]: team-draft interleaving, credit assignment, paired
//!   permutation tests and the live evaluation session state machine.
//!
//! Batch work goes through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to a sequential loop otherwise. Results
//! are identical either way.

pub mod corpus;
pub mod crs;
pub mod embedder;
pub mod eval;
pub mod exec;
pub mod interactive;
pub mod rng;
pub mod seqgen;
pub mod uttgen;

pub use corpus::{Corpus, CorpusError, Item, ItemCollection};
pub use embedder::{EmbeddingIndex, EncoderParams, TokenSequence, Tokenizer};
pub use exec::Execution;
