use std::collections::BTreeSet;
use std::io::BufRead;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Conversation, DroppedTurn, UttGenError};
use crate::corpus::{Corpus, ARTIST};

/// The post-generation filters, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterRule {
    MissingArtist,
    Blocklisted,
    TooLong,
    Overlap,
}

impl FilterRule {
    pub const ALL: [FilterRule; 4] = [
        FilterRule::MissingArtist,
        FilterRule::Blocklisted,
        FilterRule::TooLong,
        FilterRule::Overlap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterRule::MissingArtist => "missing-artist",
            FilterRule::Blocklisted => "blocklisted",
            FilterRule::TooLong => "too-long",
            FilterRule::Overlap => "overlap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub require_artist: bool,
    pub blocklist: BTreeSet<String>,
    /// Maximum utterance length in characters.
    pub max_len: usize,
    /// Maximum shared contiguous substring with the next system response.
    pub max_overlap: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            require_artist: true,
            blocklist: BTreeSet::new(),
            max_len: 450,
            max_overlap: 50,
        }
    }
}

impl FilterRules {
    pub fn validate(&self) -> Result<(), UttGenError> {
        if self.max_len == 0 || self.max_overlap == 0 {
            return Err(UttGenError::Filter("thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Reads a blocklist with one term per line; `#` starts a comment.
    pub fn read_blocklist(reader: impl BufRead) -> Result<BTreeSet<String>, UttGenError> {
        let mut terms = BTreeSet::new();
        for line in reader.lines() {
            let line = line?;
            let term = line.split('#').next().unwrap_or("").trim().to_lowercase();
            if !term.is_empty() {
                terms.insert(term);
            }
        }
        Ok(terms)
    }

    pub fn compile(&self) -> Result<CompiledRules, UttGenError> {
        self.validate()?;
        let blocklist = if self.blocklist.is_empty() {
            None
        } else {
            let alternation = self
                .blocklist
                .iter()
                .map(|t| regex::escape(t))
                .collect::<Vec<_>>()
                .join("|");
            let re = Regex::new(&format!(r"(?i)\b(?:{alternation})\b"))
                .map_err(|e| UttGenError::Filter(e.to_string()))?;
            Some(re)
        };
        Ok(CompiledRules {
            rules: self.clone(),
            blocklist,
        })
    }
}

pub struct CompiledRules {
    rules: FilterRules,
    blocklist: Option<Regex>,
}

/// What a rule needs to know about one turn.
#[derive(Debug, Clone, Copy)]
pub struct TurnView<'a> {
    pub utterance: &'a str,
    pub ctype: &'a str,
    /// Artist name(s) to look for on artist-type turns.
    pub artists: &'a [&'a str],
    pub system_response: &'a str,
}

impl CompiledRules {
    /// Every rule the turn violates, in check order.
    pub fn violations(&self, turn: &TurnView<'_>) -> Vec<FilterRule> {
        let mut fired = Vec::new();
        if self.rules.require_artist && turn.ctype == ARTIST {
            let lower = turn.utterance.to_lowercase();
            if !turn
                .artists
                .iter()
                .any(|a| lower.contains(&a.to_lowercase()))
            {
                fired.push(FilterRule::MissingArtist);
            }
        }
        if self
            .blocklist
            .as_ref()
            .is_some_and(|re| re.is_match(turn.utterance))
        {
            fired.push(FilterRule::Blocklisted);
        }
        if turn.utterance.chars().count() > self.rules.max_len {
            fired.push(FilterRule::TooLong);
        }
        if longest_common_substring(turn.utterance, turn.system_response) > self.rules.max_overlap {
            fired.push(FilterRule::Overlap);
        }
        fired
    }
}

/// Length in characters of the longest contiguous substring shared by `a`
/// and `b`.
pub fn longest_common_substring(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in &a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Drops every turn that violates an enabled rule. Dropped turns are recorded
/// with their original 1-based index and the rules that fired.
pub fn filter_conversation(
    conv: Conversation,
    corpus: &Corpus,
    rules: &CompiledRules,
) -> Result<Conversation, UttGenError> {
    let Conversation {
        id,
        target_collection,
        provenance,
        turns,
        mut dropped_turn_flags,
    } = conv;
    let mut kept = Vec::with_capacity(turns.len());
    for (t, turn) in turns.into_iter().enumerate() {
        let coll = corpus
            .collection(&turn.source_collection)
            .ok_or_else(|| UttGenError::UnknownCollection(turn.source_collection.clone()))?;
        let artists = [coll.title.as_str()];
        let fired = rules.violations(&TurnView {
            utterance: &turn.utterance,
            ctype: &coll.ctype,
            artists: &artists,
            system_response: &turn.system_response,
        });
        if turn.utterance.trim().is_empty() || !fired.is_empty() {
            dropped_turn_flags.push(DroppedTurn {
                turn: t + 1,
                rules: fired,
            });
        } else {
            kept.push(turn);
        }
    }
    Ok(Conversation {
        id,
        target_collection,
        provenance,
        turns: kept,
        dropped_turn_flags,
    })
}
