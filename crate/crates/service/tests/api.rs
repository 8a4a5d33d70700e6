mod common;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use convcurate::corpus::make_fixture_corpus;
use convcurate::embedder::{index_items, EncoderParams, Tokenizer};
use convcurate::eval::{Bm25Index, Bm25Params};
use convcurate::interactive::{
    read_events, Bm25System, EncoderSystem, LiveSystem, Session, SessionConfig, SessionStore,
};
use convcurate::Execution;
use convcurate_service::router;
use serde_json::{json, Value};

fn start(log_dir: Option<std::path::PathBuf>) -> SocketAddr {
    let corpus = Arc::new(make_fixture_corpus(300, 30, 5).unwrap());
    let tokenizer = Tokenizer::with_vocab(4096);
    let params = EncoderParams::random(4096, 16, 1).unwrap();
    let items = index_items(&params, &tokenizer, &corpus, Execution::Parallel).unwrap();
    let systems: Vec<(String, Arc<dyn LiveSystem>)> = vec![
        (
            "dense".into(),
            Arc::new(EncoderSystem {
                params,
                items,
                tokenizer,
                cap: 3,
                corpus: corpus.clone(),
            }),
        ),
        (
            "bm25".into(),
            Arc::new(Bm25System(Bm25Index::from_corpus(
                &corpus,
                Bm25Params::default(),
            ))),
        ),
    ];
    let store = SessionStore::new(corpus, systems, SessionConfig::default(), log_dir).unwrap();
    common::spawn(router(Arc::new(store)))
}

struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    fn new(addr: SocketAddr) -> Self {
        Self {
            base: format!("http://{addr}"),
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .send_json(body)
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_json().unwrap())
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut resp = self
            .agent
            .get(format!("{}{path}", self.base))
            .call()
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_json().unwrap())
    }
}

fn rate(slate: &Value, liked: usize) -> Value {
    let ratings: BTreeMap<String, bool> = slate["items"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, it)| (it["id"].as_str().unwrap().to_string(), i == liked))
        .collect();
    json!({ "ratings": ratings })
}

fn run_rounds(c: &Client, id: &str, n: usize) {
    for t in 0..n {
        let (status, slate) = c.post(
            &format!("/sessions/{id}/utterance"),
            json!({ "text": format!("something mellow for a rainy evening, take {t}") }),
        );
        assert_eq!(status, 200, "{slate}");
        let (status, body) = c.post(&format!("/sessions/{id}/ratings"), rate(&slate, t % 3));
        assert_eq!(status, 200, "{body}");
    }
}

#[test]
fn full_session_flow() {
    let c = Client::new(start(None));
    let (status, systems) = c.get("/systems");
    assert_eq!(status, 200);
    assert_eq!(systems, json!(["dense", "bm25"]));

    let (status, created) = c.post("/sessions", json!({ "id": "flow", "seed": 4 }));
    assert_eq!(status, 201, "{created}");
    assert_eq!(created["status"], "open");
    assert_eq!(created["min_rounds"], 5);

    let (status, slate) = c.post(
        "/sessions/flow/utterance",
        json!({ "text": "I am cooking dinner and want something calm" }),
    );
    assert_eq!(status, 200);
    let items = slate["items"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    for it in items {
        assert!(it["title"].is_string());
        assert!(it["artists"].is_array());
        assert!(it.get("team").is_none());
    }
    assert!(!slate.to_string().contains("team"));
    let (_, view) = c.get("/sessions/flow");
    assert_eq!(view["status"], "awaiting-ratings");
    assert!(!view.to_string().contains("team"), "{view}");

    c.post("/sessions/flow/ratings", rate(&slate, 0));
    run_rounds(&c, "flow", 4);
    let (_, view) = c.get("/sessions/flow");
    assert_eq!(view["completed_rounds"], 5);
    assert!(!view.to_string().contains("team"), "{view}");

    let (status, report) = c.post("/sessions/flow/close", json!({}));
    assert_eq!(status, 200, "{report}");
    assert_eq!(report["systems"], json!(["dense", "bm25"]));
    let rounds = report["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 5);
    for r in rounds {
        assert_eq!(
            r["teams"].as_array().unwrap().len(),
            r["items"].as_array().unwrap().len()
        );
    }
    assert!(report["p_value"].is_number());
    let (_, view) = c.get("/sessions/flow");
    assert_eq!(view["status"], "closed");
    assert_eq!(view["report"], report);
}

#[test]
fn status_codes() {
    let c = Client::new(start(None));
    assert_eq!(c.get("/sessions/missing").0, 404);
    assert_eq!(
        c.post("/sessions/missing/utterance", json!({ "text": "hi there" }))
            .0,
        404
    );
    assert_eq!(c.post("/sessions/missing/close", json!({})).0, 404);

    assert_eq!(c.post("/sessions", json!({ "id": "s" })).0, 201);
    assert_eq!(c.post("/sessions", json!({ "id": "s" })).0, 409);
    assert_eq!(c.post("/sessions", json!({ "id": "bad id!" })).0, 400);
    assert_eq!(
        c.post("/sessions", json!({ "systems": ["dense", "nope"] }))
            .0,
        400
    );
    assert_eq!(c.post("/sessions", json!({ "bogus": 1 })).0, 400);

    // Ordering violations.
    assert_eq!(
        c.post("/sessions/s/ratings", json!({ "ratings": {} })).0,
        409
    );
    assert_eq!(c.post("/sessions/s/close", json!({})).0, 409);
    let (_, slate) = c.post(
        "/sessions/s/utterance",
        json!({ "text": "upbeat running music please" }),
    );
    assert_eq!(
        c.post("/sessions/s/utterance", json!({ "text": "more" })).0,
        409
    );

    // Malformed and incomplete bodies.
    assert_eq!(
        c.post("/sessions/s/utterance", json!({ "words": "x" })).0,
        400
    );
    assert_eq!(
        c.post("/sessions/s/ratings", json!({ "ratings": { "x": true } }))
            .0,
        400
    );
    assert_eq!(c.post("/sessions/s/ratings", json!([1, 2])).0, 400);
    assert_eq!(c.post("/sessions/s/ratings", rate(&slate, 0)).0, 200);
    assert_eq!(
        c.post("/sessions/s/utterance", json!({ "text": "   " })).0,
        400
    );
    assert_eq!(c.post("/sessions/s/close", json!({})).0, 409);
}

#[test]
fn generated_ids_and_empty_create_body() {
    let c = Client::new(start(None));
    let mut resp = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .new_agent()
        .post(format!("{}/sessions", c.base))
        .send_empty()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 201);
    let body: Value = resp.body_mut().read_json().unwrap();
    let id = body["id"].as_str().unwrap();
    assert_eq!(id.len(), 36);
    assert_eq!(c.get(&format!("/sessions/{id}")).0, 200);
}

#[test]
fn concurrent_sessions_keep_separate_logs() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(Some(dir.path().to_path_buf()));
    std::thread::scope(|s| {
        for k in 0..4 {
            s.spawn(move || {
                let c = Client::new(addr);
                let id = format!("par-{k}");
                assert_eq!(c.post("/sessions", json!({ "id": id, "seed": k })).0, 201);
                run_rounds(&c, &id, 5);
                assert_eq!(c.post(&format!("/sessions/{id}/close"), json!({})).0, 200);
            });
        }
    });
    let c = Client::new(addr);
    for k in 0..4 {
        let id = format!("par-{k}");
        let events = read_events(dir.path().join(format!("{id}.jsonl"))).unwrap();
        assert_eq!(events.len(), 12);
        let replayed = Session::replay(&events).unwrap().report().unwrap();
        let (_, view) = c.get(&format!("/sessions/{id}"));
        assert_eq!(serde_json::to_value(replayed).unwrap(), view["report"]);
    }
}
