use std::collections::BTreeSet;

use super::*;
use crate::embedder::{words, SgdConfig, Tokenizer};
use crate::exec::Execution;
use crate::rng;

fn rated(id: &str, liked: bool) -> RatedItem {
    RatedItem {
        id: id.into(),
        liked,
        added: None,
    }
}

fn conv(id: &str, turns: Vec<(&str, Vec<RatedItem>)>) -> BenchmarkConversation {
    BenchmarkConversation {
        id: id.into(),
        turns: turns
            .into_iter()
            .map(|(q, items)| BenchmarkTurn {
                query: q.into(),
                items,
                has_system_response: None,
            })
            .collect(),
    }
}

/// Ranks a fixed list regardless of the query.
struct Fixed(Vec<String>);

impl Ranker for Fixed {
    fn rank(&self, _: &EvalExample, k: usize) -> Vec<String> {
        self.0.iter().take(k).cloned().collect()
    }
}

fn fixture() -> Vec<BenchmarkConversation> {
    vec![
        // Turn 1 target {a, b}; turn 2 target {b}.
        conv(
            "A",
            vec![
                ("q1", vec![rated("a", true)]),
                ("q2", vec![rated("b", true)]),
            ],
        ),
        // Turn 1 target {c}; turn 2 target empty (excluded).
        conv(
            "B",
            vec![
                ("q1", vec![rated("c", true)]),
                ("q2", vec![rated("d", false)]),
            ],
        ),
    ]
}

#[test]
fn oracle_and_adversary_bound_the_score() {
    let bench = fixture();
    let opts = EvalOptions {
        ks: vec![1, 2],
        ..EvalOptions::default()
    };
    let best = run_eval(
        "oracle",
        &OracleRanker,
        &bench,
        &opts,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(best.hits(1), 1.0);
    assert_eq!(best.hits(2), 1.0);
    let all: Vec<String> = ["a", "b", "c", "d", "e"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let worst = run_eval(
        "adversary",
        &AdversarialRanker(all),
        &bench,
        &opts,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(worst.hits(1), 0.0);
    assert_eq!(worst.hits(2), 0.0);
}

#[test]
fn hand_computed_report() {
    let bench = fixture();
    let opts = EvalOptions {
        ks: vec![1, 2],
        ..EvalOptions::default()
    };
    let ranker = Fixed(vec!["b".into(), "c".into()]);
    let r = run_eval("fixed", &ranker, &bench, &opts, Execution::Sequential).unwrap();
    // A: turn 1 target {a,b} -> hit@1; turn 2 target {b} -> hit@1. B: {c} -> miss@1, hit@2.
    assert_eq!(r.hits(1), (1.0 + 0.0) / 2.0);
    assert_eq!(r.hits(2), 1.0);
    assert_eq!(r.excluded_turns, 1);
    assert_eq!(r.scored_conversations, 2);
    assert_eq!(r.per_turn.len(), 2);
    assert_eq!(r.per_turn[0].conversations, 2);
    assert_eq!(r.per_turn[1].conversations, 1);
    assert_eq!(r.per_turn[0].hits[&1], 0.5);
    assert_eq!(r.per_turn[1].hits[&1], 1.0);
    assert_eq!(r.details[1].excluded_turns, vec![2]);

    let reversed: Vec<_> = bench.iter().rev().cloned().collect();
    let again = run_eval("fixed", &ranker, &reversed, &opts, Execution::Parallel).unwrap();
    assert_eq!(again.macro_hits, r.macro_hits);
}

#[test]
fn exclude_seen_drops_history_items() {
    let bench = vec![conv(
        "A",
        vec![
            ("q1", vec![rated("a", true)]),
            ("q2", vec![rated("b", true)]),
        ],
    )];
    let ranker = Fixed(vec!["a".into(), "b".into()]);
    let plain = EvalOptions {
        ks: vec![1],
        ..EvalOptions::default()
    };
    let r = run_eval("fixed", &ranker, &bench, &plain, Execution::Sequential).unwrap();
    // Turn 2 target is {b}; "a" sits at rank 1.
    assert_eq!(r.details[0].hits[&1], vec![1, 0]);
    let excl = EvalOptions {
        exclude_seen: true,
        ..plain
    };
    let r = run_eval("fixed", &ranker, &bench, &excl, Execution::Sequential).unwrap();
    assert_eq!(r.details[0].hits[&1], vec![1, 1]);
}

#[test]
fn unscorable_benchmarks_and_bad_k() {
    let bench = vec![conv("A", vec![("q", vec![rated("a", false)])])];
    assert!(run_eval(
        "x",
        &OracleRanker,
        &bench,
        &EvalOptions::default(),
        Execution::Sequential
    )
    .is_err());
    let opts = EvalOptions {
        ks: vec![0],
        ..EvalOptions::default()
    };
    assert!(run_eval("x", &OracleRanker, &fixture(), &opts, Execution::Sequential).is_err());
}

/// Direct transcription of the scoring formula, one document at a time.
fn bm25_oracle(docs: &[String], query: &str, k1: f64, b: f64) -> Vec<f64> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| words(d).collect()).collect();
    let n = docs.len() as f64;
    let avgdl = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q: Vec<String> = words(query).collect();
    tokenized
        .iter()
        .map(|doc| {
            let mut score = 0.0;
            for term in &q {
                let df = tokenized.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                let tf = doc.iter().filter(|w| *w == term).count() as f64;
                if tf > 0.0 {
                    score += idf * tf * (k1 + 1.0)
                        / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
                }
            }
            score
        })
        .collect()
}

#[test]
fn bm25_matches_formula() {
    use rand::Rng as _;
    let vocab = [
        "red", "blue", "green", "song", "night", "river", "gold", "echo",
    ];
    let mut rng = rng::seeded(3);
    for _ in 0..20 {
        let docs: Vec<String> = (0..20)
            .map(|_| {
                let n = rng.random_range(1..8);
                (0..n)
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let query: String = (0..4)
            .map(|_| vocab[rng.random_range(0..vocab.len())])
            .collect::<Vec<_>>()
            .join(" ");
        let idx = Bm25Index::build(
            docs.iter()
                .enumerate()
                .map(|(i, d)| (format!("d{i:02}"), d.as_str())),
            Bm25Params::default(),
        );
        let got = idx.scores(&query);
        let want = bm25_oracle(&docs, &query, 1.2, 0.75);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }
}

#[test]
fn bm25_query_concatenates_utterances_newest_first() {
    let bench = conv(
        "A",
        vec![
            ("first", vec![rated("a", true)]),
            ("second", vec![rated("b", true)]),
            ("third", vec![rated("c", true)]),
        ],
    );
    let (ex, _) = build_turn_examples(&bench, false);
    assert_eq!(bm25_query(&ex[2]), "third second first");
}

#[test]
fn median_of_odd_and_even() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
}

fn small_config() -> ExperimentConfig {
    let tokenizer = Tokenizer::with_vocab(4096);
    let mut cfg = ExperimentConfig {
        n_items: 300,
        n_collections: 40,
        train_conversations: 200,
        dev_conversations: 20,
        test_conversations: 30,
        ..ExperimentConfig::default()
    };
    cfg.encoder.dim = 16;
    cfg.encoder.tokenizer = tokenizer;
    cfg.encoder.sgd = SgdConfig {
        steps: 100,
        batch_size: 16,
        ..SgdConfig::desk()
    };
    cfg.crs.dim = 16;
    cfg.crs.tokenizer = tokenizer;
    cfg.crs.sgd.batch_size = 16;
    cfg.crs.checkpoints = vec![50, 100];
    cfg
}

#[test]
fn experiment_reports_are_reproducible() {
    let cfg = small_config();
    let a = Setup::prepare(&cfg, Execution::Parallel).unwrap();
    let b = Setup::prepare(&cfg, Execution::Sequential).unwrap();
    assert_eq!(a.test, b.test);
    assert_eq!(a.dev, b.dev);
    let ra = run_end_to_end(&a, Execution::Parallel).unwrap();
    let rb = run_end_to_end(&b, Execution::Parallel).unwrap();
    assert_eq!(
        serde_json::to_string(&ra).unwrap(),
        serde_json::to_string(&rb).unwrap()
    );
    for rep in [&ra.crs, &ra.untrained, &ra.bm25, &ra.collection_trained] {
        for v in rep.macro_hits.values() {
            assert!((0.0..=1.0).contains(v));
        }
        for w in rep.per_turn.windows(2) {
            assert!(w[1].conversations <= w[0].conversations);
        }
    }
}

#[test]
fn ablation_budgets_and_nested_sweeps() {
    let cfg = small_config();
    let setup = Setup::prepare(&cfg, Execution::Parallel).unwrap();
    for mode in AblationMode::ALL {
        let (convs, stats) = setup
            .training_conversations(mode, 50, 1, Execution::Parallel)
            .unwrap();
        assert_eq!(convs.len(), 50);
        assert_eq!(stats.conversations, 50);
    }
    let (big, _) = setup
        .training_conversations(AblationMode::Full, 40, 2, Execution::Parallel)
        .unwrap();
    let (small, _) = setup
        .training_conversations(AblationMode::Full, 10, 2, Execution::Parallel)
        .unwrap();
    assert_eq!(&big[..10], &small[..]);

    assert!(run_scaling_sweep(&setup, &[20, 10], &[1], Execution::Parallel).is_err());
    let sweep = run_scaling_sweep(&setup, &[20], &[1], Execution::Parallel).unwrap();
    assert_eq!(sweep.hits_at_100[&20].len(), 1);
}

#[test]
fn held_out_targets_come_from_the_test_split() {
    let cfg = small_config();
    let setup = Setup::prepare(&cfg, Execution::Parallel).unwrap();
    let test_pool: BTreeSet<&String> = setup.split.test.iter().collect();
    assert!(!setup.test.is_empty());
    let baseline = setup.random_baseline(100).unwrap();
    assert!((0.0..=1.0).contains(&baseline));
    // Every liked item belongs to some test-split collection.
    for conv in &setup.test {
        for item in conv.turns.iter().flat_map(|t| &t.items).filter(|i| i.liked) {
            assert!(test_pool.iter().any(|c| setup
                .corpus
                .collection(c)
                .unwrap()
                .item_ids
                .contains(&item.id)));
        }
    }
}
