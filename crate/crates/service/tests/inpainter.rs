mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use convcurate::corpus::make_fixture_corpus;
use convcurate::seqgen::random_sequences;
use convcurate::uttgen::{
    conversations_from_sequences, inpaint, DatasetConfig, InpaintError, InpaintMode,
    InpaintRequest, InpaintResponse, OneShotResponse, PartialConversation, Provenance, Role, Slot,
    UttGenError, UtteranceSource,
};
use convcurate::Execution;
use convcurate_service::{HttpInpainter, InpainterSettings};
use serde_json::Value;

fn partial(turns: usize) -> PartialConversation {
    let mut slots = Vec::new();
    for i in 0..turns {
        slots.push(Slot {
            role: Role::User,
            text: None,
        });
        slots.push(Slot {
            role: Role::System,
            text: Some(format!(
                "Sure, here are songs described as mood {i}. What else?"
            )),
        });
    }
    PartialConversation { turns: slots }
}

fn settings(timeout_ms: u64, retries: usize) -> InpainterSettings {
    InpainterSettings {
        timeout: Duration::from_millis(timeout_ms),
        retries,
    }
}

/// Echoes the system response that follows the mask, so results can be
/// checked against the request.
fn canned() -> Router {
    Router::new().route(
        "/fill",
        post(|Json(req): Json<InpaintRequest>| async move {
            let masks = req.turns.iter().filter(|s| s.text.is_none()).count();
            if masks == 1 {
                let next = req
                    .turns
                    .last()
                    .and_then(|s| s.text.clone())
                    .unwrap_or_default();
                Json(
                    serde_json::to_value(InpaintResponse {
                        text: format!("user before: {next}"),
                    })
                    .unwrap(),
                )
            } else {
                Json(
                    serde_json::to_value(OneShotResponse {
                        texts: (0..masks).map(|i| format!("one-shot {i}")).collect(),
                    })
                    .unwrap(),
                )
            }
        }),
    )
}

#[test]
fn canned_server_iterative() {
    let addr = common::spawn(canned());
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(5000, 0));
    let out = inpaint(&client, &partial(3), InpaintMode::Iterative).unwrap();
    assert_eq!(out.len(), 3);
    for (i, text) in out.iter().enumerate() {
        assert!(text.ends_with(&format!("mood {i}. What else?")), "{text}");
    }
}

#[test]
fn canned_server_one_shot() {
    let addr = common::spawn(canned());
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(5000, 0));
    let out = inpaint(&client, &partial(4), InpaintMode::OneShot).unwrap();
    assert_eq!(
        out,
        vec!["one-shot 0", "one-shot 1", "one-shot 2", "one-shot 3"]
    );
}

#[test]
fn short_response_is_a_count_mismatch() {
    let app = Router::new().route(
        "/fill",
        post(|| async {
            Json(OneShotResponse {
                texts: vec!["only one".into()],
            })
        }),
    );
    let addr = common::spawn(app);
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(5000, 0));
    let err = inpaint(&client, &partial(3), InpaintMode::OneShot).unwrap_err();
    assert!(
        matches!(
            err,
            InpaintError::CountMismatch {
                expected: 3,
                got: 1
            }
        ),
        "{err}"
    );
}

#[test]
fn malformed_body_is_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = Router::new().route(
        "/fill",
        post(move || {
            counter.fetch_add(1, Ordering::SeqCst);
            async { Json(serde_json::json!({ "utterance": 3 })) }
        }),
    );
    let addr = common::spawn(app);
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(5000, 3));
    let err = inpaint(&client, &partial(1), InpaintMode::Iterative).unwrap_err();
    assert!(matches!(err, InpaintError::Malformed(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_retries_then_fails() {
    let addr = common::dead_address();
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(2000, 2));
    let err = inpaint(&client, &partial(2), InpaintMode::Iterative).unwrap_err();
    assert!(
        matches!(err, InpaintError::Transport { attempts: 3, .. }),
        "{err}"
    );
}

#[test]
fn slow_server_times_out() {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = Router::new().route(
        "/fill",
        post(move || {
            counter.fetch_add(1, Ordering::SeqCst);
            async {
                tokio::time::sleep(Duration::from_millis(1500)).await;
                Json(InpaintResponse {
                    text: "late".into(),
                })
            }
        }),
    );
    let addr = common::spawn(app);
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(100, 1));
    let err = inpaint(&client, &partial(1), InpaintMode::Iterative).unwrap_err();
    assert!(
        matches!(err, InpaintError::Timeout { attempts: 2 }),
        "{err}"
    );
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn retry_recovers_from_server_errors() {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = Router::new().route(
        "/fill",
        post(move || {
            let n = counter.fetch_add(1, Ordering::SeqCst);
            async move {
                if n == 0 {
                    Err(axum::http::StatusCode::SERVICE_UNAVAILABLE)
                } else {
                    Ok(Json(InpaintResponse {
                        text: "second time lucky".into(),
                    }))
                }
            }
        }),
    );
    let addr = common::spawn(app);
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(5000, 1));
    let out = inpaint(&client, &partial(1), InpaintMode::Iterative).unwrap();
    assert_eq!(out, vec!["second time lucky"]);
}

#[test]
fn dataset_generation_through_http() {
    let corpus = make_fixture_corpus(300, 30, 4).unwrap();
    let seqs = random_sequences(&corpus, 4, 12, 9, Execution::Parallel);
    let addr = common::spawn(canned());
    let client = HttpInpainter::new(format!("http://{addr}/fill"), settings(5000, 0));
    let cfg = DatasetConfig {
        concurrency: 4,
        ..DatasetConfig::default()
    };
    let ds = conversations_from_sequences(
        &seqs,
        &corpus,
        UtteranceSource::Inpaint(&client),
        &cfg,
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(ds.conversations.len(), 12);
    for (conv, seq) in ds.conversations.iter().zip(&seqs) {
        assert_eq!(conv.provenance, Provenance::Inpainted);
        assert_eq!(
            conv.turns.len() + conv.dropped_turn_flags.len(),
            seq.turns.len()
        );
        for t in &conv.turns {
            assert!(t.utterance.starts_with("user before: "));
        }
    }

    let dead = HttpInpainter::new(
        format!("http://{}/fill", common::dead_address()),
        settings(500, 0),
    );
    let err = conversations_from_sequences(
        &seqs,
        &corpus,
        UtteranceSource::Inpaint(&dead),
        &cfg,
        Execution::Sequential,
    )
    .unwrap_err();
    assert!(matches!(err, UttGenError::Inpaint { .. }), "{err}");
}

#[test]
fn request_body_marks_the_mask_with_null() {
    let body = serde_json::to_value(InpaintRequest {
        turns: partial(1).turns,
    })
    .unwrap();
    let turns = body["turns"].as_array().unwrap();
    assert_eq!(turns[0]["role"], "user");
    assert_eq!(turns[0]["text"], Value::Null);
    assert_eq!(turns[1]["role"], "system");
}
