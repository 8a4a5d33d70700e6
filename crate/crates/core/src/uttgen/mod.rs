//! User utterance generation for slate sequences.
//!
//! Each turn gets a system response rendered from a template keyed by the
//! turn's preference type and collection type. The responses frame a partial
//! conversation whose masked user slots are filled either by an external
//! dialog inpainter or from a bank of user-side templates. The responses are
//! scaffolding only: they feed the overlap filter and are never written out.

mod filter;
mod inpaint;
mod templates;

pub use filter::{
    filter_conversation, longest_common_substring, CompiledRules, FilterRule, FilterRules, TurnView,
};
pub use inpaint::{
    inpaint, InpaintError, InpaintMode, InpaintRequest, InpaintResponse, Inpainter, OneShotRequest,
    OneShotResponse,
};
pub use templates::{
    build_partial_conversation, random_description_utterances, render_system_response,
    template_utterances, PartialConversation, ResponseTemplate, Role, Slot, TemplateBank,
    PLACEHOLDER,
};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::exec::Execution;
use crate::rng;
use crate::seqgen::{GeneratedSequence, PrefType, SeqGenError, Walker};

#[derive(Debug, Error)]
pub enum UttGenError {
    #[error("no template for {ptype}/{ctype}; registered: {registered}")]
    MissingTemplate {
        ptype: String,
        ctype: String,
        registered: String,
    },
    #[error("bad template: {0}")]
    Template(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("bad filter rules: {0}")]
    Filter(String),
    #[error("bad conversation record: {0}")]
    Record(String),
    #[error("conversation `{id}`: {source}")]
    Inpaint {
        id: String,
        #[source]
        source: InpaintError,
    },
    #[error(transparent)]
    SeqGen(#[from] SeqGenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub utterance: String,
    pub slate: Vec<String>,
    pub ptype: PrefType,
    pub source_collection: String,
    #[serde(skip)]
    pub system_response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Inpainted,
    Templated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTurn {
    /// 1-based index in the unfiltered conversation.
    pub turn: usize,
    pub rules: Vec<FilterRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub target_collection: String,
    pub provenance: Provenance,
    pub turns: Vec<ConversationTurn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_turn_flags: Vec<DroppedTurn>,
}

/// Where user utterances come from.
#[derive(Clone, Copy)]
pub enum UtteranceSource<'a> {
    Template,
    /// Templates quoting a random same-type collection's description.
    RandomDescription,
    Inpaint(&'a (dyn Inpainter + Sync)),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub rules: FilterRules,
    pub inpaint_mode: InpaintMode,
    /// Conversations with an inpainter request in flight at once.
    pub concurrency: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rules: FilterRules::default(),
            inpaint_mode: InpaintMode::Iterative,
            concurrency: 8,
        }
    }
}

/// Turn accounting for one generated dataset. Each dropped turn counts under
/// the first rule that fired, so `kept_turns + Σ dropped = total_turns`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub conversations: usize,
    pub total_turns: usize,
    pub kept_turns: usize,
    pub dropped: BTreeMap<String, usize>,
    /// Conversations left with no turns.
    pub empty_conversations: usize,
}

impl DatasetStats {
    pub fn dropped_turns(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Wall-clock cost of each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub sequences: Duration,
    pub utterances: Duration,
    pub filtering: Duration,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub conversations: Vec<Conversation>,
    pub stats: DatasetStats,
    pub timings: Timings,
}

/// Unfiltered conversation for one sequence.
pub fn assemble_conversation(
    seq: &GeneratedSequence,
    corpus: &Corpus,
    source: UtteranceSource<'_>,
    inpaint_mode: InpaintMode,
    rng: &mut rng::Rng,
) -> Result<Conversation, UttGenError> {
    let system = TemplateBank::system();
    let partial = build_partial_conversation(&seq.turns, corpus, &system)?;
    let (utterances, provenance) = match source {
        UtteranceSource::Template => (
            template_utterances(&seq.turns, corpus, &TemplateBank::user(), rng)?,
            Provenance::Templated,
        ),
        UtteranceSource::RandomDescription => (
            random_description_utterances(&seq.turns, corpus, &TemplateBank::user(), rng)?,
            Provenance::Templated,
        ),
        UtteranceSource::Inpaint(client) => (
            inpaint(client, &partial, inpaint_mode).map_err(|source| UttGenError::Inpaint {
                id: seq.id.clone(),
                source,
            })?,
            Provenance::Inpainted,
        ),
    };
    let turns = seq
        .turns
        .iter()
        .zip(utterances)
        .enumerate()
        .map(|(t, (turn, utterance))| ConversationTurn {
            utterance,
            slate: turn.slate.clone(),
            ptype: turn.ptype,
            source_collection: turn.source_collection.clone(),
            system_response: partial.system_response(t).unwrap_or_default().to_string(),
        })
        .collect();
    Ok(Conversation {
        id: seq.id.clone(),
        target_collection: seq.target_collection.clone(),
        provenance,
        turns,
        dropped_turn_flags: Vec::new(),
    })
}

/// Utterances and filtering for already generated sequences. Sequence `i`
/// draws template choices from its own stream.
pub fn conversations_from_sequences(
    seqs: &[GeneratedSequence],
    corpus: &Corpus,
    source: UtteranceSource<'_>,
    config: &DatasetConfig,
    exec: Execution,
) -> Result<Dataset, UttGenError> {
    let rules = config.rules.compile()?;
    let utt_seed = rng::derive(config.seed, "utterances");
    let started = Instant::now();
    let chunk = match source {
        UtteranceSource::Inpaint(_) => config.concurrency.max(1),
        _ => seqs.len().max(1),
    };
    let mut raw = Vec::with_capacity(seqs.len());
    for (c, block) in seqs.chunks(chunk).enumerate() {
        let offset = c * chunk;
        let out = exec.map_range(block.len(), |j| {
            let mut rng = rng::stream(utt_seed, (offset + j) as u64);
            assemble_conversation(&block[j], corpus, source, config.inpaint_mode, &mut rng)
        });
        for conv in out {
            raw.push(conv?);
        }
    }
    let utterances = started.elapsed();

    let started = Instant::now();
    let mut stats = DatasetStats {
        conversations: raw.len(),
        ..DatasetStats::default()
    };
    let mut conversations = Vec::with_capacity(raw.len());
    for conv in raw {
        stats.total_turns += conv.turns.len();
        let filtered = filter_conversation(conv, corpus, &rules)?;
        stats.kept_turns += filtered.turns.len();
        for d in &filtered.dropped_turn_flags {
            let key = d.rules.first().map_or("empty", |r| r.as_str());
            *stats.dropped.entry(key.to_string()).or_default() += 1;
        }
        if filtered.turns.is_empty() {
            stats.empty_conversations += 1;
        }
        conversations.push(filtered);
    }
    Ok(Dataset {
        conversations,
        stats,
        timings: Timings {
            sequences: Duration::ZERO,
            utterances,
            filtering: started.elapsed(),
        },
    })
}

/// `count` walk sequences turned into filtered conversations.
pub fn generate_dataset(
    walker: &Walker<'_>,
    corpus: &Corpus,
    count: usize,
    source: UtteranceSource<'_>,
    config: &DatasetConfig,
    exec: Execution,
) -> Result<Dataset, UttGenError> {
    let started = Instant::now();
    let seqs = walker.generate_sequences(count, config.seed, exec)?;
    let sequences = started.elapsed();
    let mut ds = conversations_from_sequences(&seqs, corpus, source, config, exec)?;
    ds.timings.sequences = sequences;
    Ok(ds)
}

pub fn write_conversations(convs: &[Conversation], mut w: impl Write) -> Result<(), UttGenError> {
    for c in convs {
        let line = serde_json::to_string(c).map_err(|e| UttGenError::Record(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_conversations(r: impl BufRead) -> Result<Vec<Conversation>, UttGenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(&line)
            .map_err(|e| UttGenError::Record(format!("line {}: {e}", i + 1)))?;
        if conv.turns.iter().any(|t| t.utterance.trim().is_empty()) {
            return Err(UttGenError::Record(format!(
                "line {}: empty utterance",
                i + 1
            )));
        }
        out.push(conv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
