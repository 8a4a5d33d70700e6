//! Offline evaluation.
//!
//! Benchmarks are line-delimited conversations whose turns carry a query and
//! the shown items with binary ratings. Every turn is scored against the gold
//! history: earlier turns with disliked items removed. The target of a turn
//! is every liked item of the conversation that is not yet in that history,
//! including liked items that were never added to it. Hits@k is averaged over
//! a conversation's turns and then over conversations.

mod bench;
mod bm25;
mod experiments;
mod metrics;
mod report;

pub use bench::{
    benchmark_examples, build_turn_examples, read_benchmark, synthetic_benchmark, write_benchmark,
    BenchmarkConversation, BenchmarkTurn, EvalExample, RatedItem,
};
pub use bm25::{Bm25Index, Bm25Params};
pub use experiments::{
    median, run_ablation, run_end_to_end, run_scaling_sweep, AblationMode, AblationReport,
    EndToEndReport, ExperimentConfig, Setup, SweepReport,
};
pub use metrics::{hits_at_k, macro_hits, macro_hits_grouped, random_hit_probability};
pub use report::{
    bm25_query, run_eval, AdversarialRanker, Bm25Ranker, ConversationDetail, EvalOptions,
    EvalReport, OracleRanker, Ranker, TurnSummary,
};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::crs::CrsError;
use crate::embedder::EmbedError;
use crate::seqgen::SeqGenError;
use crate::uttgen::UttGenError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("hits@k is undefined for an empty target")]
    EmptyTarget,
    #[error("{0}")]
    Argument(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("bad benchmark record: {0}")]
    Record(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    SeqGen(#[from] SeqGenError),
    #[error(transparent)]
    UttGen(#[from] UttGenError),
    #[error(transparent)]
    Crs(#[from] CrsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
