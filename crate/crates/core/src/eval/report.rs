use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::bm25::Bm25Index;
use super::metrics::{hits_at_k, macro_hits};
use super::{BenchmarkConversation, EvalError, EvalExample};
use crate::crs::Retriever;
use crate::exec::Execution;

/// A system under evaluation: given a turn's gold history and query,
/// returns a ranked list of item ids.
pub trait Ranker: Sync {
    fn rank(&self, example: &EvalExample, k: usize) -> Vec<String>;
}

impl Ranker for Retriever<'_> {
    fn rank(&self, ex: &EvalExample, k: usize) -> Vec<String> {
        self.retrieve(&ex.history, &ex.query, k)
    }
}

/// BM25 over item text; the query is the current utterance followed by all
/// earlier utterances.
pub struct Bm25Ranker<'a>(pub &'a Bm25Index);

impl Ranker for Bm25Ranker<'_> {
    fn rank(&self, ex: &EvalExample, k: usize) -> Vec<String> {
        self.0.rank(&bm25_query(ex), k)
    }
}

pub fn bm25_query(ex: &EvalExample) -> String {
    std::iter::once(ex.query.as_str())
        .chain(ex.history.iter().rev().map(|h| h.utterance.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Returns the target itself: the upper bound.
pub struct OracleRanker;

impl Ranker for OracleRanker {
    fn rank(&self, ex: &EvalExample, k: usize) -> Vec<String> {
        ex.target.iter().take(k).cloned().collect()
    }
}

/// Ranks only items that are never targets: the lower bound.
pub struct AdversarialRanker(pub Vec<String>);

impl Ranker for AdversarialRanker {
    fn rank(&self, ex: &EvalExample, k: usize) -> Vec<String> {
        self.0
            .iter()
            .filter(|id| !ex.target.contains(*id))
            .take(k)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Drop items already in the gold history from rankings.
    pub exclude_seen: bool,
    /// Skip turns flagged as lacking a system response.
    pub skip_without_response: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![10, 20, 100],
            exclude_seen: false,
            skip_without_response: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSummary {
    pub turn: usize,
    pub conversations: usize,
    pub hits: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationDetail {
    pub id: String,
    pub scored_turns: Vec<usize>,
    pub excluded_turns: Vec<usize>,
    /// Per k, the hit indicator of each scored turn.
    pub hits: BTreeMap<usize, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub conversations: usize,
    /// Conversations with at least one scored turn.
    pub scored_conversations: usize,
    pub excluded_turns: usize,
    pub macro_hits: BTreeMap<usize, f64>,
    pub per_turn: Vec<TurnSummary>,
    pub details: Vec<ConversationDetail>,
}

impl EvalReport {
    pub fn hits(&self, k: usize) -> f64 {
        self.macro_hits.get(&k).copied().unwrap_or(f64::NAN)
    }
}

fn ranked_for(ranker: &dyn Ranker, ex: &EvalExample, k: usize, exclude_seen: bool) -> Vec<String> {
    if !exclude_seen {
        return ranker.rank(ex, k);
    }
    let seen: BTreeSet<String> = ex.seen();
    ranker
        .rank(ex, k + seen.len())
        .into_iter()
        .filter(|id| !seen.contains(id))
        .take(k)
        .collect()
}

/// Scores `ranker` on every turn of `bench` against the gold history.
pub fn run_eval(
    system: &str,
    ranker: &dyn Ranker,
    bench: &[BenchmarkConversation],
    options: &EvalOptions,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    if options.ks.is_empty() || options.ks.contains(&0) {
        return Err(EvalError::Argument(
            "k list must be non-empty and positive".into(),
        ));
    }
    let k_max = *options.ks.iter().max().expect("non-empty");
    let details: Vec<Result<ConversationDetail, EvalError>> = exec.map_slice(bench, |conv| {
        let (examples, excluded_turns) =
            super::build_turn_examples(conv, options.skip_without_response);
        let mut hits: BTreeMap<usize, Vec<u8>> =
            options.ks.iter().map(|&k| (k, Vec::new())).collect();
        for ex in &examples {
            let ranked = ranked_for(ranker, ex, k_max, options.exclude_seen);
            for &k in &options.ks {
                hits.get_mut(&k)
                    .expect("key")
                    .push(hits_at_k(&ranked, &ex.target, k)?);
            }
        }
        Ok(ConversationDetail {
            id: conv.id.clone(),
            scored_turns: examples.iter().map(|e| e.turn).collect(),
            excluded_turns,
            hits,
        })
    });
    let details: Vec<ConversationDetail> = details.into_iter().collect::<Result<_, _>>()?;

    let scored: Vec<&ConversationDetail> = details
        .iter()
        .filter(|d| !d.scored_turns.is_empty())
        .collect();
    if scored.is_empty() {
        return Err(EvalError::Argument(
            "no scorable turns in the benchmark".into(),
        ));
    }
    let mut macro_scores = BTreeMap::new();
    for &k in &options.ks {
        let per_conv: Vec<Vec<f64>> = scored
            .iter()
            .map(|d| d.hits[&k].iter().map(|&h| h as f64).collect())
            .collect();
        macro_scores.insert(k, macro_hits(&per_conv)?);
    }

    let mut by_turn: BTreeMap<usize, (usize, BTreeMap<usize, f64>)> = BTreeMap::new();
    for d in &scored {
        for (i, &t) in d.scored_turns.iter().enumerate() {
            let entry = by_turn.entry(t).or_default();
            entry.0 += 1;
            for &k in &options.ks {
                *entry.1.entry(k).or_default() += d.hits[&k][i] as f64;
            }
        }
    }
    let per_turn = by_turn
        .into_iter()
        .map(|(turn, (n, sums))| TurnSummary {
            turn,
            conversations: n,
            hits: sums.into_iter().map(|(k, s)| (k, s / n as f64)).collect(),
        })
        .collect();

    Ok(EvalReport {
        system: system.to_string(),
        conversations: bench.len(),
        scored_conversations: scored.len(),
        excluded_turns: details.iter().map(|d| d.excluded_turns.len()).sum(),
        macro_hits: macro_scores,
        per_turn,
        details,
    })
}
