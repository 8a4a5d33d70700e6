//! The conversational retriever.
//!
//! A query is the current utterance followed by the history in reverse
//! chronological order, each slate rendered as the text of its first few
//! items:
//!
//! ```text
//! u_t [SEP] d(s_{t-1}) [SEP] u_{t-1} [SEP] ... [SEP] d(s_1) [SEP] u_1
//! ```
//!
//! Queries and items share the dual encoder of [`crate::embedder`].

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedder::{
    contrastive_loss, index_items, train_contrastive, EmbedError, EmbeddingIndex, EncoderParams,
    SgdConfig, TokenSequence, Tokenizer, SEP_TEXT, SEP_TOKEN,
};
use crate::eval::{hits_at_k, macro_hits_grouped, EvalExample};
use crate::exec::Execution;
use crate::rng::{self, Rng};
use crate::uttgen::Conversation;

/// Slate items rendered into each history segment.
pub const DEFAULT_SLATE_CAP: usize = 3;

#[derive(Debug, Error)]
pub enum CrsError {
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// One earlier turn: what the user said and the slate that followed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub utterance: String,
    pub slate: Vec<String>,
}

/// Query segments in order: `u_t`, then `d(s_{t-1})`, `u_{t-1}`, ... `u_1`.
fn segments<'h>(history: &'h [HistoryTurn], u_t: &'h str) -> impl Iterator<Item = Segment<'h>> {
    std::iter::once(Segment::Utterance(u_t)).chain(
        history
            .iter()
            .rev()
            .flat_map(|h| [Segment::Slate(&h.slate), Segment::Utterance(&h.utterance)]),
    )
}

enum Segment<'a> {
    Utterance(&'a str),
    Slate(&'a [String]),
}

/// Text of the first `cap` slate items that exist in the corpus.
pub fn slate_text(slate: &[String], cap: usize, corpus: &Corpus) -> String {
    slate
        .iter()
        .take(cap)
        .filter_map(|id| corpus.item(id))
        .map(crate::embedder::item_text)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The query as text with literal separators. Feature tokens are not
/// representable here; [`build_query`] is authoritative.
pub fn query_text(history: &[HistoryTurn], u_t: &str, cap: usize, corpus: &Corpus) -> String {
    segments(history, u_t)
        .map(|s| match s {
            Segment::Utterance(u) => u.to_string(),
            Segment::Slate(slate) => slate_text(slate, cap, corpus),
        })
        .collect::<Vec<_>>()
        .join(&format!(" {SEP_TEXT} "))
}

/// Token sequence of the query, truncated to the tokenizer's maximum length
/// by dropping the oldest content.
pub fn build_query(
    history: &[HistoryTurn],
    u_t: &str,
    cap: usize,
    corpus: &Corpus,
    tokenizer: &Tokenizer,
) -> TokenSequence {
    let mut out = Vec::new();
    for (i, seg) in segments(history, u_t).enumerate() {
        if out.len() >= tokenizer.max_len {
            break;
        }
        if i > 0 {
            out.push(SEP_TOKEN);
        }
        match seg {
            Segment::Utterance(u) => tokenizer.push_text(u, &mut out),
            Segment::Slate(slate) => {
                for item in slate.iter().take(cap).filter_map(|id| corpus.item(id)) {
                    tokenizer.push_item(item, &mut out);
                }
            }
        }
    }
    tokenizer.finish(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub conversation_id: String,
    /// 1-based turn the query was built at.
    pub turn: usize,
    pub query: TokenSequence,
    pub positive: String,
}

/// One example from `conv`: a uniform turn `t`, history slates truncated to
/// a uniform prefix length, and a positive drawn from `s_t`. `None` when the
/// conversation has no turn with a non-empty slate at the drawn position.
pub fn augment_example(
    conv: &Conversation,
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    cap: usize,
    rng: &mut Rng,
) -> Option<TrainingExample> {
    if conv.turns.is_empty() {
        return None;
    }
    let t = rng.random_range(0..conv.turns.len());
    let history: Vec<HistoryTurn> = conv.turns[..t]
        .iter()
        .map(|turn| {
            let k = if turn.slate.is_empty() {
                0
            } else {
                rng.random_range(1..=turn.slate.len())
            };
            HistoryTurn {
                utterance: turn.utterance.clone(),
                slate: turn.slate[..k].to_vec(),
            }
        })
        .collect();
    let current = &conv.turns[t];
    if current.slate.is_empty() {
        return None;
    }
    let positive = current.slate[rng.random_range(0..current.slate.len())].clone();
    Some(TrainingExample {
        conversation_id: conv.id.clone(),
        turn: t + 1,
        query: build_query(&history, &current.utterance, cap, corpus, tokenizer),
        positive,
    })
}

/// Endless stream of augmented examples: repeated shuffled passes over the
/// conversations, one example per conversation per pass.
pub struct Augmenter<'a> {
    convs: Vec<&'a Conversation>,
    corpus: &'a Corpus,
    tokenizer: &'a Tokenizer,
    cap: usize,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Augmenter<'a> {
    pub fn new(
        convs: &'a [Conversation],
        corpus: &'a Corpus,
        tokenizer: &'a Tokenizer,
        cap: usize,
    ) -> Result<Self, CrsError> {
        let convs: Vec<&Conversation> = convs
            .iter()
            .filter(|c| c.turns.iter().any(|t| !t.slate.is_empty()))
            .collect();
        if convs.is_empty() {
            return Err(CrsError::InsufficientData(
                "no conversation with a non-empty slate".into(),
            ));
        }
        Ok(Self {
            order: (0..convs.len()).collect(),
            pos: convs.len(),
            convs,
            corpus,
            tokenizer,
            cap,
        })
    }

    pub fn next_example(&mut self, rng: &mut Rng) -> TrainingExample {
        loop {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let conv = self.convs[self.order[self.pos]];
            self.pos += 1;
            if let Some(ex) = augment_example(conv, self.corpus, self.tokenizer, self.cap, rng) {
                return ex;
            }
        }
    }
}

/// Convenience over [`Augmenter`]: the first `n` examples for a seed.
pub fn augment(
    convs: &[Conversation],
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    cap: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<TrainingExample>, CrsError> {
    let mut aug = Augmenter::new(convs, corpus, tokenizer, cap)?;
    let mut rng = rng::seeded(seed);
    Ok((0..n).map(|_| aug.next_example(&mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrsConfig {
    pub dim: usize,
    pub tokenizer: Tokenizer,
    /// `steps` is ignored; training runs to the last checkpoint.
    pub sgd: SgdConfig,
    pub slate_cap: usize,
    /// Steps at which dev Hits@10 is measured.
    pub checkpoints: Vec<usize>,
    pub init_seed: u64,
}

impl Default for CrsConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            tokenizer: Tokenizer::default(),
            sgd: SgdConfig::desk(),
            slate_cap: DEFAULT_SLATE_CAP,
            checkpoints: vec![500, 1000, 1500, 2000],
            init_seed: 0,
        }
    }
}

impl CrsConfig {
    /// Checkpoints of the large-scale setup.
    pub fn large_scale_checkpoints() -> Vec<usize> {
        vec![25_000, 50_000, 75_000, 100_000]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub step: usize,
    pub dev_hits_at_10: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub checkpoints: Vec<CheckpointScore>,
    pub selected_step: usize,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
}

/// Trains from `init` (or a fresh random table) and returns the checkpoint
/// with the best dev Hits@10, ties going to the earliest.
pub fn train_crs(
    convs: &[Conversation],
    corpus: &Corpus,
    config: &CrsConfig,
    dev: &[EvalExample],
    init: Option<&EncoderParams>,
    exec: Execution,
) -> Result<(EncoderParams, SelectionReport), CrsError> {
    let mut grid = config.checkpoints.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid[0] == 0 {
        return Err(CrsError::Config(
            "checkpoints must be non-empty and positive".into(),
        ));
    }
    if dev.is_empty() {
        return Err(CrsError::InsufficientData("empty dev set".into()));
    }
    let batch = config.sgd.batch_size;
    if batch == 0 {
        return Err(CrsError::Config("batch size must be >= 1".into()));
    }
    let tok = &config.tokenizer;
    let mut params = match init {
        Some(p) => p.clone(),
        None => EncoderParams::random(tok.vocab_size, config.dim, config.init_seed)?,
    };
    if params.vocab() != tok.vocab_size {
        return Err(CrsError::Config(format!(
            "initial parameters have vocabulary {}, tokenizer has {}",
            params.vocab(),
            tok.vocab_size
        )));
    }

    let featurize = |ex: TrainingExample| {
        let item = corpus.item(&ex.positive).expect("slates hold corpus items");
        (ex.query, tok.featurize_item(item))
    };
    let probe: Vec<_> = augment(
        convs,
        corpus,
        tok,
        config.slate_cap,
        batch,
        rng::derive(config.sgd.seed, "probe"),
    )?
    .into_iter()
    .map(featurize)
    .collect();
    let (probe_q, probe_x): (Vec<_>, Vec<_>) = probe.into_iter().unzip();
    let initial_probe_loss = contrastive_loss(&params, &probe_q, &probe_x, config.sgd.temperature);

    let mut aug = Augmenter::new(convs, corpus, tok, config.slate_cap)?;
    let sgd = SgdConfig {
        steps: *grid.last().expect("non-empty"),
        ..config.sgd.clone()
    };
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize, EncoderParams)> = None;
    let mut eval_error = None;
    train_contrastive(
        &mut params,
        &sgd,
        |rng| {
            (0..batch)
                .map(|_| featurize(aug.next_example(rng)))
                .collect()
        },
        |step, p, _| {
            if !grid.contains(&step) || eval_error.is_some() {
                return;
            }
            let items = match index_items(p, tok, corpus, exec) {
                Ok(i) => i,
                Err(e) => {
                    eval_error = Some(e);
                    return;
                }
            };
            let retriever = Retriever {
                params: p,
                items: &items,
                corpus,
                tokenizer: tok,
                cap: config.slate_cap,
            };
            let score = retriever.score(dev, 10, exec);
            scores.push((step, score));
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, step, p.clone()));
            }
        },
    );
    if let Some(e) = eval_error {
        return Err(e.into());
    }
    let (_, selected_step, selected) = best.expect("at least one checkpoint");
    let final_probe_loss = contrastive_loss(&selected, &probe_q, &probe_x, config.sgd.temperature);
    let report = SelectionReport {
        checkpoints: scores
            .into_iter()
            .map(|(step, dev_hits_at_10)| CheckpointScore {
                step,
                dev_hits_at_10,
                selected: step == selected_step,
            })
            .collect(),
        selected_step,
        initial_probe_loss,
        final_probe_loss,
    };
    Ok((selected, report))
}

/// A trained (or untrained) encoder together with the item index it built.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub params: &'a EncoderParams,
    pub items: &'a EmbeddingIndex,
    pub corpus: &'a Corpus,
    pub tokenizer: &'a Tokenizer,
    pub cap: usize,
}

impl Retriever<'_> {
    pub fn query_vector(&self, history: &[HistoryTurn], u_t: &str) -> Vec<f64> {
        let q = build_query(history, u_t, self.cap, self.corpus, self.tokenizer);
        self.params.encode(&q).vector
    }

    /// Top-`k` items for the query built from `history` and `u_t`.
    pub fn retrieve(&self, history: &[HistoryTurn], u_t: &str, k: usize) -> Vec<String> {
        let q = self.query_vector(history, u_t);
        self.items
            .nearest(&q, k)
            .into_iter()
            .map(|n| n.id.to_string())
            .collect()
    }

    /// Like [`Retriever::retrieve`], skipping items in `exclude`.
    pub fn retrieve_excluding(
        &self,
        history: &[HistoryTurn],
        u_t: &str,
        k: usize,
        exclude: &BTreeSet<String>,
    ) -> Vec<String> {
        let q = self.query_vector(history, u_t);
        self.items
            .nearest_where(&q, k, |row| !exclude.contains(self.items.id(row)))
            .into_iter()
            .map(|n| n.id.to_string())
            .collect()
    }

    /// Macro Hits@k over `examples`.
    pub fn score(&self, examples: &[EvalExample], k: usize, exec: Execution) -> f64 {
        let hits = exec.map_slice(examples, |ex| {
            let slate = self.retrieve(&ex.history, &ex.query, k);
            hits_at_k(&slate, &ex.target, k).unwrap_or(0)
        });
        macro_hits_grouped(
            examples
                .iter()
                .map(|e| e.conversation_id.as_str())
                .zip(hits),
        )
        .unwrap_or(0.0)
    }
}
