//! Live interleaved evaluation.
//!
//! For each user utterance two systems rank items given the session's
//! transcript; their rankings are merged by team-draft interleaving into the
//! one slate the user sees and rates. A system earns a hit for the round when
//! the user likes any item it drafted. Team labels stay server-side until the
//! session closes.

mod interleave;
mod session;
mod significance;

pub use interleave::{credit, team_draft_interleave, InterleavedSlate, Team};
pub use session::{
    read_events, Bm25System, EncoderSystem, ItemView, LiveSystem, Round, RoundReport, RoundView,
    Session, SessionConfig, SessionEvent, SessionReport, SessionStatus, SessionStore, SessionView,
    SlateView,
};
pub use significance::{significance, significance_hits, DEFAULT_RESAMPLES, DEFAULT_SEED};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InteractiveError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    Exists(String),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("out of order: {0}")]
    Ordering(String),
    #[error("incomplete ratings: {0}")]
    IncompleteRatings(String),
    #[error("{0}")]
    Argument(String),
    #[error("session log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
