use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Corpus;
use crate::crs::HistoryTurn;
use crate::uttgen::Conversation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedItem {
    pub id: String,
    pub liked: bool,
    /// False when a liked item was left out of the recorded history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkTurn {
    pub query: String,
    pub items: Vec<RatedItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_system_response: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkConversation {
    pub id: String,
    pub turns: Vec<BenchmarkTurn>,
}

/// One scored position of a benchmark conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub conversation_id: String,
    /// 1-based.
    pub turn: usize,
    /// Earlier turns with disliked (and never added) items removed.
    pub history: Vec<HistoryTurn>,
    pub query: String,
    /// Liked items of the whole conversation not yet in the history.
    pub target: BTreeSet<String>,
}

impl EvalExample {
    pub fn seen(&self) -> BTreeSet<String> {
        self.history
            .iter()
            .flat_map(|h| h.slate.iter().cloned())
            .collect()
    }
}

/// Examples for every turn of `conv`, plus the 1-based turns whose target
/// came out empty (or that were skipped for lacking a system response).
pub fn build_turn_examples(
    conv: &BenchmarkConversation,
    skip_without_response: bool,
) -> (Vec<EvalExample>, Vec<usize>) {
    let liked: BTreeSet<&str> = conv
        .turns
        .iter()
        .flat_map(|t| t.items.iter().filter(|i| i.liked).map(|i| i.id.as_str()))
        .collect();
    let mut history: Vec<HistoryTurn> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut examples = Vec::new();
    let mut excluded = Vec::new();
    for (t, turn) in conv.turns.iter().enumerate() {
        let target: BTreeSet<String> = liked
            .iter()
            .filter(|id| !seen.contains(**id))
            .map(|id| id.to_string())
            .collect();
        let skipped = skip_without_response && turn.has_system_response == Some(false);
        if target.is_empty() || skipped {
            excluded.push(t + 1);
        } else {
            examples.push(EvalExample {
                conversation_id: conv.id.clone(),
                turn: t + 1,
                history: history.clone(),
                query: turn.query.clone(),
                target,
            });
        }
        let kept: Vec<String> = turn
            .items
            .iter()
            .filter(|i| i.liked && i.added != Some(false))
            .map(|i| i.id.clone())
            .collect();
        seen.extend(kept.iter().cloned());
        history.push(HistoryTurn {
            utterance: turn.query.clone(),
            slate: kept,
        });
    }
    (examples, excluded)
}

/// Examples of a whole benchmark.
pub fn benchmark_examples(
    bench: &[BenchmarkConversation],
    skip_without_response: bool,
) -> Vec<EvalExample> {
    bench
        .iter()
        .flat_map(|c| build_turn_examples(c, skip_without_response).0)
        .collect()
}

/// A benchmark view of generated conversations: each turn shows the first
/// `shown` slate items, and an item is liked exactly when it belongs to the
/// conversation's target collection.
pub fn synthetic_benchmark(
    convs: &[Conversation],
    corpus: &Corpus,
    shown: usize,
) -> Result<Vec<BenchmarkConversation>, EvalError> {
    convs
        .iter()
        .filter(|c| !c.turns.is_empty())
        .map(|c| {
            let target = corpus
                .collection(&c.target_collection)
                .ok_or_else(|| EvalError::UnknownCollection(c.target_collection.clone()))?;
            let wanted: BTreeSet<&str> = target.item_ids.iter().map(String::as_str).collect();
            let turns = c
                .turns
                .iter()
                .map(|t| BenchmarkTurn {
                    query: t.utterance.clone(),
                    items: t
                        .slate
                        .iter()
                        .take(shown)
                        .map(|id| RatedItem {
                            id: id.clone(),
                            liked: wanted.contains(id.as_str()),
                            added: None,
                        })
                        .collect(),
                    has_system_response: None,
                })
                .collect();
            Ok(BenchmarkConversation {
                id: c.id.clone(),
                turns,
            })
        })
        .collect()
}

pub fn write_benchmark(
    bench: &[BenchmarkConversation],
    mut w: impl Write,
) -> Result<(), EvalError> {
    for c in bench {
        let line = serde_json::to_string(c).map_err(|e| EvalError::Record(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_benchmark(r: impl BufRead) -> Result<Vec<BenchmarkConversation>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| EvalError::Record(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, liked: bool) -> RatedItem {
        RatedItem {
            id: id.into(),
            liked,
            added: None,
        }
    }

    fn turn(query: &str, items: Vec<RatedItem>) -> BenchmarkTurn {
        BenchmarkTurn {
            query: query.into(),
            items,
            has_system_response: None,
        }
    }

    #[test]
    fn single_turn() {
        let conv = BenchmarkConversation {
            id: "c".into(),
            turns: vec![turn(
                "q",
                vec![item("a", true), item("b", true), item("c", true)],
            )],
        };
        let (ex, excluded) = build_turn_examples(&conv, false);
        assert!(excluded.is_empty());
        assert_eq!(ex.len(), 1);
        assert!(ex[0].history.is_empty());
        assert_eq!(ex[0].target.len(), 3);
    }

    #[test]
    fn seen_items_leave_the_target_and_dislikes_leave_the_history() {
        let conv = BenchmarkConversation {
            id: "c".into(),
            turns: vec![
                turn("q1", vec![item("a", true), item("x", false)]),
                turn("q2", vec![item("b", true)]),
                turn("q3", vec![item("y", false)]),
            ],
        };
        let (ex, excluded) = build_turn_examples(&conv, false);
        assert_eq!(
            ex[0].target,
            ["a", "b"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(ex[1].history[0].slate, vec!["a".to_string()]);
        assert_eq!(ex[1].target, ["b"].iter().map(|s| s.to_string()).collect());
        assert_eq!(ex.len(), 2);
        assert_eq!(excluded, vec![3]);
    }

    #[test]
    fn leftovers_stay_in_later_targets() {
        let mut capped = item("a", true);
        capped.added = Some(false);
        let conv = BenchmarkConversation {
            id: "c".into(),
            turns: vec![turn("q1", vec![capped]), turn("q2", vec![item("b", true)])],
        };
        let (ex, _) = build_turn_examples(&conv, false);
        assert!(ex[1].history[0].slate.is_empty());
        assert!(ex[1].target.contains("a"));
    }

    #[test]
    fn skip_flag() {
        let mut t1 = turn("q1", vec![item("a", true)]);
        t1.has_system_response = Some(false);
        let conv = BenchmarkConversation {
            id: "c".into(),
            turns: vec![t1, turn("q2", vec![item("b", true)])],
        };
        assert_eq!(build_turn_examples(&conv, false).0.len(), 2);
        let (ex, excluded) = build_turn_examples(&conv, true);
        assert_eq!(ex.len(), 1);
        assert_eq!(excluded, vec![1]);
    }

    #[test]
    fn jsonl_round_trip() {
        let bench = vec![BenchmarkConversation {
            id: "c".into(),
            turns: vec![turn("q", vec![item("a", true)])],
        }];
        let mut buf = Vec::new();
        write_benchmark(&bench, &mut buf).unwrap();
        assert_eq!(read_benchmark(buf.as_slice()).unwrap(), bench);
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("added"));
    }
}
