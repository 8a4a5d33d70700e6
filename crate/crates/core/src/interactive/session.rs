use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::interleave::{credit, team_draft_interleave, InterleavedSlate, Team};
use super::significance::{significance_hits, DEFAULT_RESAMPLES, DEFAULT_SEED};
use super::InteractiveError;
use crate::corpus::Corpus;
use crate::crs::{HistoryTurn, Retriever};
use crate::embedder::{words, EmbeddingIndex, EncoderParams, Tokenizer};
use crate::eval::Bm25Index;
use crate::rng;

/// A ranking system that can serve live sessions.
pub trait LiveSystem: Send + Sync {
    fn rank(&self, history: &[HistoryTurn], query: &str, k: usize) -> Vec<String>;
}

/// A dual encoder with its item index.
pub struct EncoderSystem {
    pub params: EncoderParams,
    pub items: EmbeddingIndex,
    pub tokenizer: Tokenizer,
    pub cap: usize,
    pub corpus: Arc<Corpus>,
}

impl LiveSystem for EncoderSystem {
    fn rank(&self, history: &[HistoryTurn], query: &str, k: usize) -> Vec<String> {
        Retriever {
            params: &self.params,
            items: &self.items,
            corpus: &self.corpus,
            tokenizer: &self.tokenizer,
            cap: self.cap,
        }
        .retrieve(history, query, k)
    }
}

/// BM25 over the current and all earlier utterances.
pub struct Bm25System(pub Bm25Index);

impl LiveSystem for Bm25System {
    fn rank(&self, history: &[HistoryTurn], query: &str, k: usize) -> Vec<String> {
        let text = std::iter::once(query)
            .chain(history.iter().rev().map(|h| h.utterance.as_str()))
            .collect::<Vec<_>>()
            .join(" ");
        self.0.rank(&text, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub slate_size: usize,
    pub min_rounds: usize,
    /// Sessions whose utterances average fewer words are left out of the
    /// aggregates.
    pub min_avg_words: f64,
    /// Utterances that are only one of these (ignoring case and punctuation)
    /// are left out of the aggregates.
    pub greetings: BTreeSet<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            slate_size: 10,
            min_rounds: 5,
            min_avg_words: 4.0,
            greetings: [
                "hello",
                "hi",
                "hey",
                "thanks",
                "thank you",
                "bye",
                "goodbye",
                "ok",
                "okay",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Open,
    AwaitingRatings,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    /// 1-based.
    pub turn: usize,
    pub utterance: String,
    pub slate: InterleavedSlate,
    pub ratings: Option<BTreeMap<String, bool>>,
}

/// One line of a session's append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SessionEvent {
    Created {
        id: String,
        systems: [String; 2],
        seed: u64,
        config: SessionConfig,
    },
    Utterance {
        turn: usize,
        text: String,
        slate: InterleavedSlate,
    },
    Ratings {
        turn: usize,
        ratings: BTreeMap<String, bool>,
    },
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    /// Systems drafting as team A and team B.
    pub systems: [String; 2],
    pub seed: u64,
    pub config: SessionConfig,
    pub status: SessionStatus,
    pub rounds: Vec<Round>,
}

impl Session {
    pub fn new(id: String, systems: [String; 2], seed: u64, config: SessionConfig) -> Self {
        Self {
            id,
            systems,
            seed,
            config,
            status: SessionStatus::Open,
            rounds: Vec::new(),
        }
    }

    pub fn created_event(&self) -> SessionEvent {
        SessionEvent::Created {
            id: self.id.clone(),
            systems: self.systems.clone(),
            seed: self.seed,
            config: self.config.clone(),
        }
    }

    pub fn completed_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.ratings.is_some()).count()
    }

    pub fn pending(&self) -> Option<&Round> {
        self.rounds.last().filter(|r| r.ratings.is_none())
    }

    /// Items shown so far in this session.
    pub fn shown(&self) -> BTreeSet<String> {
        self.rounds
            .iter()
            .flat_map(|r| r.slate.items.iter().cloned())
            .collect()
    }

    /// The transcript as both systems see it: each utterance with the
    /// combined slate that was shown for it.
    pub fn history(&self) -> Vec<HistoryTurn> {
        self.rounds
            .iter()
            .map(|r| HistoryTurn {
                utterance: r.utterance.clone(),
                slate: r.slate.items.clone(),
            })
            .collect()
    }

    fn ensure_open(&self) -> Result<(), InteractiveError> {
        match self.status {
            SessionStatus::Open => Ok(()),
            SessionStatus::AwaitingRatings => Err(InteractiveError::Ordering(
                "the current slate must be rated first".into(),
            )),
            SessionStatus::Closed => {
                Err(InteractiveError::Ordering("the session is closed".into()))
            }
        }
    }

    /// Builds the interleaved slate for a new utterance without changing the
    /// session.
    pub fn draft(
        &self,
        text: &str,
        a: &dyn LiveSystem,
        b: &dyn LiveSystem,
    ) -> Result<SessionEvent, InteractiveError> {
        self.ensure_open()?;
        if text.trim().is_empty() {
            return Err(InteractiveError::Argument("empty utterance".into()));
        }
        let history = self.history();
        let shown = self.shown();
        let k = self.config.slate_size;
        let fresh = |sys: &dyn LiveSystem| -> Vec<String> {
            sys.rank(&history, text, k + shown.len())
                .into_iter()
                .filter(|id| !shown.contains(id))
                .collect()
        };
        let turn = self.rounds.len() + 1;
        let mut rng = rng::stream(self.seed, turn as u64);
        let slate = team_draft_interleave(&fresh(a), &fresh(b), k, &mut rng);
        Ok(SessionEvent::Utterance {
            turn,
            text: text.to_string(),
            slate,
        })
    }

    /// Checks that `event` is valid in the current state and applies it.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), InteractiveError> {
        match event {
            SessionEvent::Created { .. } => {
                return Err(InteractiveError::Log("duplicate creation event".into()));
            }
            SessionEvent::Utterance { turn, text, slate } => {
                self.ensure_open()?;
                if *turn != self.rounds.len() + 1 {
                    return Err(InteractiveError::Log(format!("unexpected turn {turn}")));
                }
                self.rounds.push(Round {
                    turn: *turn,
                    utterance: text.clone(),
                    slate: slate.clone(),
                    ratings: None,
                });
                self.status = SessionStatus::AwaitingRatings;
            }
            SessionEvent::Ratings { turn, ratings } => {
                let Some(round) = self.pending() else {
                    return Err(InteractiveError::Ordering(
                        "no slate is awaiting ratings".into(),
                    ));
                };
                if round.turn != *turn {
                    return Err(InteractiveError::Ordering(format!(
                        "ratings for turn {turn}, but turn {} is pending",
                        round.turn
                    )));
                }
                let expected: BTreeSet<&String> = round.slate.items.iter().collect();
                let given: BTreeSet<&String> = ratings.keys().collect();
                if expected != given {
                    let missing: Vec<_> = expected.difference(&given).collect();
                    let extra: Vec<_> = given.difference(&expected).collect();
                    return Err(InteractiveError::IncompleteRatings(format!(
                        "missing {missing:?}, unexpected {extra:?}"
                    )));
                }
                self.rounds.last_mut().expect("pending").ratings = Some(ratings.clone());
                self.status = SessionStatus::Open;
            }
            SessionEvent::Closed => {
                self.ensure_open()?;
                if self.completed_rounds() < self.config.min_rounds {
                    return Err(InteractiveError::Ordering(format!(
                        "{} of {} required rounds completed",
                        self.completed_rounds(),
                        self.config.min_rounds
                    )));
                }
                self.status = SessionStatus::Closed;
            }
        }
        Ok(())
    }

    fn is_greeting(&self, text: &str) -> bool {
        let normalized = words(text).collect::<Vec<_>>().join(" ");
        normalized.is_empty() || self.config.greetings.contains(&normalized)
    }

    /// Per-round credit and the aggregate comparison. Deterministic in the
    /// session contents.
    pub fn report(&self) -> Result<SessionReport, InteractiveError> {
        let rated: Vec<&Round> = self.rounds.iter().filter(|r| r.ratings.is_some()).collect();
        let average_words = if rated.is_empty() {
            0.0
        } else {
            rated
                .iter()
                .map(|r| words(&r.utterance).count())
                .sum::<usize>() as f64
                / rated.len() as f64
        };
        let session_excluded = average_words < self.config.min_avg_words;
        let mut rounds = Vec::with_capacity(rated.len());
        for r in &rated {
            let ratings = r.ratings.as_ref().expect("rated");
            let (a, b) = credit(&r.slate, ratings)?;
            rounds.push(RoundReport {
                turn: r.turn,
                utterance: r.utterance.clone(),
                items: r.slate.items.clone(),
                teams: r.slate.teams.clone(),
                ratings: ratings.clone(),
                credit: [a, b],
                greeting: self.is_greeting(&r.utterance),
            });
        }
        let scored: Vec<[u8; 2]> = if session_excluded {
            Vec::new()
        } else {
            rounds
                .iter()
                .filter(|r| !r.greeting)
                .map(|r| r.credit)
                .collect()
        };
        let (hit_rate, p_value) = if scored.is_empty() {
            (None, None)
        } else {
            let a: Vec<u8> = scored.iter().map(|c| c[0]).collect();
            let b: Vec<u8> = scored.iter().map(|c| c[1]).collect();
            let mean = |v: &[u8]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            (
                Some([mean(&a), mean(&b)]),
                Some(significance_hits(&a, &b, DEFAULT_RESAMPLES, DEFAULT_SEED)?),
            )
        };
        Ok(SessionReport {
            id: self.id.clone(),
            systems: self.systems.clone(),
            rounds,
            average_words,
            session_excluded,
            scored_rounds: scored.len(),
            hit_rate,
            p_value,
        })
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, InteractiveError> {
        let Some(SessionEvent::Created {
            id,
            systems,
            seed,
            config,
        }) = events.first()
        else {
            return Err(InteractiveError::Log(
                "log does not start with a creation event".into(),
            ));
        };
        let mut session = Session::new(id.clone(), systems.clone(), *seed, config.clone());
        for e in &events[1..] {
            session.apply(e)?;
        }
        Ok(session)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub turn: usize,
    pub utterance: String,
    pub items: Vec<String>,
    pub teams: Vec<Team>,
    pub ratings: BTreeMap<String, bool>,
    /// Hit indicators for team A and team B.
    pub credit: [u8; 2],
    pub greeting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub id: String,
    pub systems: [String; 2],
    pub rounds: Vec<RoundReport>,
    pub average_words: f64,
    pub session_excluded: bool,
    pub scored_rounds: usize,
    /// Per-round hit rates of the two systems over scored rounds.
    pub hit_rate: Option<[f64; 2]>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub title: String,
    pub artists: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub album: Option<String>,
}

/// A slate as the client sees it: no team labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateView {
    pub turn: usize,
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub turn: usize,
    pub utterance: String,
    pub items: Vec<ItemView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratings: Option<BTreeMap<String, bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: SessionStatus,
    pub min_rounds: usize,
    pub completed_rounds: usize,
    pub rounds: Vec<RoundView>,
    /// Present only once the session is closed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SessionReport>,
}

fn item_views(corpus: &Corpus, ids: &[String]) -> Vec<ItemView> {
    ids.iter()
        .map(|id| match corpus.item(id) {
            Some(item) => ItemView {
                id: id.clone(),
                title: item.title.clone(),
                artists: item.artists.clone(),
                album: item.album.clone(),
            },
            None => ItemView {
                id: id.clone(),
                title: id.clone(),
                artists: Vec::new(),
                album: None,
            },
        })
        .collect()
}

/// Live sessions over a fixed set of registered systems. Each session is
/// guarded by its own lock, so calls on one session are serialized while
/// distinct sessions proceed in parallel.
pub struct SessionStore {
    corpus: Arc<Corpus>,
    systems: Vec<(String, Arc<dyn LiveSystem>)>,
    config: SessionConfig,
    log_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    pub fn new(
        corpus: Arc<Corpus>,
        systems: Vec<(String, Arc<dyn LiveSystem>)>,
        config: SessionConfig,
        log_dir: Option<PathBuf>,
    ) -> Result<Self, InteractiveError> {
        if systems.len() < 2 {
            return Err(InteractiveError::Argument(
                "two systems are required".into(),
            ));
        }
        if let Some(dir) = &log_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            corpus,
            systems,
            config,
            log_dir,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn system_names(&self) -> Vec<&str> {
        self.systems.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn system(&self, name: &str) -> Result<&dyn LiveSystem, InteractiveError> {
        self.systems
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_ref())
            .ok_or_else(|| InteractiveError::UnknownSystem(name.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, InteractiveError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| InteractiveError::UnknownSession(id.to_string()))
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, event: &SessionEvent) -> Result<(), InteractiveError> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let line =
            serde_json::to_string(event).map_err(|e| InteractiveError::Log(e.to_string()))?;
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }

    /// Opens a session comparing `systems` (default: the first two
    /// registered).
    pub fn create(
        &self,
        id: String,
        systems: Option<[String; 2]>,
        seed: u64,
    ) -> Result<SessionView, InteractiveError> {
        let systems = match systems {
            Some(pair) => pair,
            None => [self.systems[0].0.clone(), self.systems[1].0.clone()],
        };
        for s in &systems {
            self.system(s)?;
        }
        if systems[0] == systems[1] {
            return Err(InteractiveError::Argument(
                "a session compares two different systems".into(),
            ));
        }
        let session = Session::new(id.clone(), systems, seed, self.config.clone());
        let mut map = self.sessions.write().expect("session map lock");
        if map.contains_key(&id) {
            return Err(InteractiveError::Exists(id));
        }
        self.append(&id, &session.created_event())?;
        let view = self.view_of(&session)?;
        map.insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn post_utterance(&self, id: &str, text: &str) -> Result<SlateView, InteractiveError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().expect("session lock");
        let a = self.system(&session.systems[0])?;
        let b = self.system(&session.systems[1])?;
        let event = session.draft(text, a, b)?;
        self.append(id, &event)?;
        session.apply(&event)?;
        let round = session.pending().expect("just added");
        Ok(SlateView {
            turn: round.turn,
            items: item_views(&self.corpus, &round.slate.items),
        })
    }

    pub fn post_ratings(
        &self,
        id: &str,
        ratings: BTreeMap<String, bool>,
    ) -> Result<SessionView, InteractiveError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().expect("session lock");
        let turn = session
            .pending()
            .map(|r| r.turn)
            .ok_or_else(|| InteractiveError::Ordering("no slate is awaiting ratings".into()))?;
        let event = SessionEvent::Ratings { turn, ratings };
        let mut next = session.clone();
        next.apply(&event)?;
        self.append(id, &event)?;
        *session = next;
        self.view_of(&session)
    }

    pub fn close(&self, id: &str) -> Result<SessionReport, InteractiveError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().expect("session lock");
        let mut next = session.clone();
        next.apply(&SessionEvent::Closed)?;
        let report = next.report()?;
        self.append(id, &SessionEvent::Closed)?;
        *session = next;
        Ok(report)
    }

    pub fn view(&self, id: &str) -> Result<SessionView, InteractiveError> {
        let handle = self.session(id)?;
        let session = handle.lock().expect("session lock");
        self.view_of(&session)
    }

    fn view_of(&self, session: &Session) -> Result<SessionView, InteractiveError> {
        Ok(SessionView {
            id: session.id.clone(),
            status: session.status,
            min_rounds: session.config.min_rounds,
            completed_rounds: session.completed_rounds(),
            rounds: session
                .rounds
                .iter()
                .map(|r| RoundView {
                    turn: r.turn,
                    utterance: r.utterance.clone(),
                    items: item_views(&self.corpus, &r.slate.items),
                    ratings: r.ratings.clone(),
                })
                .collect(),
            report: if session.status == SessionStatus::Closed {
                Some(session.report()?)
            } else {
                None
            },
        })
    }
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<SessionEvent>, InteractiveError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| InteractiveError::Log(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
