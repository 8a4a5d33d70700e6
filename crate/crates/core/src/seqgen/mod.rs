//! Slate sequence generation by a biased random walk over collection
//! embeddings.
//!
//! A conversation starts from a target collection `r*` and an initial user
//! vector `r_1` drawn from a rank band of `r*`'s collection neighbors. Each
//! turn samples a collection type, then a collection `z_t` from the user
//! vector's type-filtered neighborhood with probability proportional to
//! `exp(<z_t, r*> / τ)`. The user vector moves to the unit vector in
//! span{r_t, z_t} closest to `r*` ([`solve_weights`]). A positive weight on
//! `z_t` makes `z_t` itself the slate ("more"); otherwise the slate is the
//! item neighborhood of the new user vector ("less"). Turn 1 is always
//! labelled "init".

mod solve;

pub use solve::{solve_weights, WeightSolution, COLLINEAR_TOLERANCE, FEASIBILITY_TOLERANCE};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedder::{dot, EmbeddingIndex};
use crate::exec::Execution;
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum SeqGenError {
    #[error("the collection index is empty")]
    EmptyIndex,
    #[error("no collection of type `{0}`")]
    NoCollectionOfType(String),
    #[error("index row `{0}` is not a collection of the corpus")]
    UnknownCollection(String),
    #[error("invalid walk configuration: {0}")]
    Config(String),
    #[error("bad sequence record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefType {
    Init,
    More,
    Less,
}

impl PrefType {
    pub fn as_str(self) -> &'static str {
        match self {
            PrefType::Init => "init",
            PrefType::More => "more",
            PrefType::Less => "less",
        }
    }
}

/// Walk parameters. Defaults: 6 turns, neighborhood 64, τ = 0.1, initial
/// band [64, 128), 10-item slates on "less" turns, uniform collection types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub turns: usize,
    pub neighborhood: usize,
    pub temperature: f64,
    pub initial_rank_range: (usize, usize),
    pub nn_slate_size: usize,
    /// Relative weights per collection type. Empty means uniform over the
    /// corpus's types.
    pub type_weights: BTreeMap<String, f64>,
    /// Draws of a new collection after a collinear one before accepting the
    /// degenerate step.
    pub max_resamples: usize,
    /// Restricts target collections to these ids (e.g. a held-out split).
    pub target_pool: Option<Vec<String>>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            turns: 6,
            neighborhood: 64,
            temperature: 0.1,
            initial_rank_range: (64, 128),
            nn_slate_size: 10,
            type_weights: BTreeMap::new(),
            max_resamples: 5,
            target_pool: None,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), SeqGenError> {
        let (lo, hi) = self.initial_rank_range;
        if self.turns == 0 {
            return Err(SeqGenError::Config("turns must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(SeqGenError::Config("temperature must be > 0".into()));
        }
        if lo >= hi {
            return Err(SeqGenError::Config(format!(
                "empty rank range [{lo}, {hi})"
            )));
        }
        if self.neighborhood == 0 || self.nn_slate_size == 0 {
            return Err(SeqGenError::Config(
                "neighborhood and slate size must be >= 1".into(),
            ));
        }
        if self.type_weights.values().any(|w| w.is_nan() || *w < 0.0) {
            return Err(SeqGenError::Config("type weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// The simulated user's position.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkState {
    pub user_vec: Vec<f64>,
    pub target_vec: Vec<f64>,
    /// 1-based turn about to be generated.
    pub turn: usize,
}

impl WalkState {
    pub fn target_similarity(&self) -> f64 {
        dot(&self.user_vec, &self.target_vec)
    }
}

/// One generated turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateTurn {
    pub slate: Vec<String>,
    pub ptype: PrefType,
    pub source_collection: String,
    pub alpha: f64,
    pub beta: f64,
    /// `<r_{t+1}, r*>` after this turn; absent for random sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Walk,
    Random,
}

/// A full slate sequence plus the walk's vectors for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSequence {
    pub id: String,
    pub generator: Generator,
    pub target_collection: String,
    pub initial_collection: String,
    /// The initial band was empty and the last band of equal width was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub initial_fallback: bool,
    pub turns: Vec<SlateTurn>,
    /// `r_1 ..= r_{T+1}`. Not serialized.
    #[serde(skip)]
    pub user_vectors: Vec<Vec<f64>>,
    #[serde(skip)]
    pub target_vector: Vec<f64>,
}

/// Sequence generation over one corpus and its two indices.
pub struct Walker<'a> {
    corpus: &'a Corpus,
    collections: &'a EmbeddingIndex,
    items: &'a EmbeddingIndex,
    config: WalkConfig,
    row_type: Vec<usize>,
    types: Vec<String>,
    type_dist: Option<WeightedIndex<f64>>,
    target_rows: Vec<usize>,
}

impl<'a> Walker<'a> {
    pub fn new(
        corpus: &'a Corpus,
        collections: &'a EmbeddingIndex,
        items: &'a EmbeddingIndex,
        config: WalkConfig,
    ) -> Result<Self, SeqGenError> {
        config.validate()?;
        if collections.is_empty() {
            return Err(SeqGenError::EmptyIndex);
        }
        let types: Vec<String> = if config.type_weights.is_empty() {
            corpus.types().iter().cloned().collect()
        } else {
            config.type_weights.keys().cloned().collect()
        };
        let weights: Vec<f64> = if config.type_weights.is_empty() {
            vec![1.0; types.len()]
        } else {
            config.type_weights.values().copied().collect()
        };
        let type_dist = WeightedIndex::new(&weights).ok();
        let mut row_type = Vec::with_capacity(collections.len());
        for id in collections.ids() {
            let coll = corpus
                .collection(id)
                .ok_or_else(|| SeqGenError::UnknownCollection(id.clone()))?;
            row_type.push(
                types
                    .iter()
                    .position(|t| *t == coll.ctype)
                    .unwrap_or(usize::MAX),
            );
        }
        let target_rows = match &config.target_pool {
            None => (0..collections.len()).collect(),
            Some(pool) => {
                let mut rows: Vec<usize> = pool
                    .iter()
                    .map(|id| {
                        collections
                            .row_of(id)
                            .ok_or_else(|| SeqGenError::UnknownCollection(id.clone()))
                    })
                    .collect::<Result<_, _>>()?;
                rows.sort_unstable();
                rows.dedup();
                if rows.is_empty() {
                    return Err(SeqGenError::Config("empty target pool".into()));
                }
                rows
            }
        };
        Ok(Self {
            corpus,
            collections,
            items,
            config,
            row_type,
            types,
            type_dist,
            target_rows,
        })
    }

    pub fn config(&self) -> &WalkConfig {
        &self.config
    }

    /// Uniformly samples a target collection (from the target pool, if any).
    pub fn sample_target(&self, rng: &mut Rng) -> (usize, Vec<f64>) {
        sample_target_rows(self.collections, &self.target_rows, rng)
    }

    /// Uniformly samples a collection whose rank around `r_star` falls in
    /// the configured band. Returns (row, vector, used_fallback).
    pub fn sample_initial(&self, r_star: &[f64], rng: &mut Rng) -> (usize, Vec<f64>, bool) {
        sample_initial(
            self.collections,
            r_star,
            self.config.initial_rank_range,
            rng,
        )
    }

    fn sample_type(&self, rng: &mut Rng) -> Result<usize, SeqGenError> {
        self.type_dist
            .as_ref()
            .map(|d| d.sample(rng))
            .ok_or_else(|| SeqGenError::Config("no collection types to sample".into()))
    }

    /// Samples a collection of type `type_idx` from the `neighborhood`
    /// nearest collections of that type around `r_t`, weighted by
    /// softmax(<z, r*> / τ).
    pub fn sample_collection(
        &self,
        r_t: &[f64],
        r_star: &[f64],
        type_idx: usize,
        rng: &mut Rng,
    ) -> Result<(usize, Vec<f64>), SeqGenError> {
        let candidates = self
            .collections
            .nearest_where(r_t, self.config.neighborhood, |row| {
                self.row_type[row] == type_idx
            });
        if candidates.is_empty() {
            let name = self.types.get(type_idx).cloned().unwrap_or_default();
            return Err(SeqGenError::NoCollectionOfType(name));
        }
        let rows: Vec<usize> = candidates.iter().map(|c| c.row).collect();
        let row = softmax_pick(
            self.collections,
            &rows,
            r_star,
            self.config.temperature,
            rng,
        );
        Ok((row, self.collections.vector(row).to_vec()))
    }

    /// Applies one update and routes the slate. `source_row` is the sampled
    /// collection's row in the collection index.
    pub fn step(
        &self,
        state: &WalkState,
        source_row: usize,
        solution: WeightSolution,
    ) -> (WalkState, SlateTurn) {
        let z = self.collections.vector(source_row);
        let mut next: Vec<f64> = state
            .user_vec
            .iter()
            .zip(z)
            .map(|(r, z)| solution.alpha * r + solution.beta * z)
            .collect();
        let norm = dot(&next, &next).sqrt();
        next.iter_mut().for_each(|x| *x /= norm);

        let source_id = self.collections.id(source_row);
        let (slate, ptype) = if solution.beta > 0.0 {
            let coll = self.corpus.collection(source_id).expect("checked in new");
            (coll.item_ids.clone(), PrefType::More)
        } else {
            let slate = self
                .items
                .nearest(&next, self.config.nn_slate_size)
                .into_iter()
                .map(|n| n.id.to_string())
                .collect();
            (slate, PrefType::Less)
        };
        let ptype = if state.turn == 1 {
            PrefType::Init
        } else {
            ptype
        };
        let target_similarity = Some(dot(&next, &state.target_vec));
        let turn = SlateTurn {
            slate,
            ptype,
            source_collection: source_id.to_string(),
            alpha: solution.alpha,
            beta: solution.beta,
            target_similarity,
            degenerate: solution.degenerate,
        };
        let next_state = WalkState {
            user_vec: next,
            target_vec: state.target_vec.clone(),
            turn: state.turn + 1,
        };
        (next_state, turn)
    }

    /// Samples a collection for the current state, redrawing (type and
    /// collection) while the draw is collinear with the user vector, up to
    /// `max_resamples` times.
    fn draw_update(
        &self,
        state: &WalkState,
        rng: &mut Rng,
    ) -> Result<(usize, WeightSolution), SeqGenError> {
        let mut last = None;
        for _ in 0..=self.config.max_resamples {
            let (row, z) = self.draw_collection(state, rng)?;
            let solution = solve_weights(&state.user_vec, &z, &state.target_vec);
            if !solution.degenerate {
                return Ok((row, solution));
            }
            last = Some((row, solution));
        }
        Ok(last.expect("at least one draw"))
    }

    fn draw_collection(
        &self,
        state: &WalkState,
        rng: &mut Rng,
    ) -> Result<(usize, Vec<f64>), SeqGenError> {
        const TYPE_ATTEMPTS: usize = 64;
        let mut last_err = None;
        for _ in 0..TYPE_ATTEMPTS {
            let ty = self.sample_type(rng)?;
            match self.sample_collection(&state.user_vec, &state.target_vec, ty, rng) {
                Ok(found) => return Ok(found),
                Err(e @ SeqGenError::NoCollectionOfType(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// One full sequence of `turns` slates.
    pub fn generate_sequence(
        &self,
        id: String,
        rng: &mut Rng,
    ) -> Result<GeneratedSequence, SeqGenError> {
        let (target_row, target_vec) = self.sample_target(rng);
        let (initial_row, user_vec, initial_fallback) = self.sample_initial(&target_vec, rng);
        let mut state = WalkState {
            user_vec,
            target_vec,
            turn: 1,
        };
        let mut user_vectors = vec![state.user_vec.clone()];
        let mut turns = Vec::with_capacity(self.config.turns);
        for _ in 0..self.config.turns {
            let (row, solution) = self.draw_update(&state, rng)?;
            let (next, turn) = self.step(&state, row, solution);
            user_vectors.push(next.user_vec.clone());
            turns.push(turn);
            state = next;
        }
        Ok(GeneratedSequence {
            id,
            generator: Generator::Walk,
            target_collection: self.collections.id(target_row).to_string(),
            initial_collection: self.collections.id(initial_row).to_string(),
            initial_fallback,
            turns,
            user_vectors,
            target_vector: state.target_vec,
        })
    }

    /// `count` sequences; sequence `i` uses stream `i` of `seed`.
    pub fn generate_sequences(
        &self,
        count: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Vec<GeneratedSequence>, SeqGenError> {
        exec.map_range(count, |i| {
            let mut rng = rng::stream(seed, i as u64);
            self.generate_sequence(sequence_id(i), &mut rng)
        })
        .into_iter()
        .collect()
    }
}

pub fn sequence_id(i: usize) -> String {
    format!("seq{i:07}")
}

fn sample_target_rows(index: &EmbeddingIndex, rows: &[usize], rng: &mut Rng) -> (usize, Vec<f64>) {
    let row = *rows.choose(rng).expect("non-empty target rows");
    (row, index.vector(row).to_vec())
}

/// Uniformly samples a collection from a non-empty index.
pub fn sample_target(
    index: &EmbeddingIndex,
    rng: &mut Rng,
) -> Result<(String, Vec<f64>), SeqGenError> {
    if index.is_empty() {
        return Err(SeqGenError::EmptyIndex);
    }
    let row = rng.random_range(0..index.len());
    Ok((index.id(row).to_string(), index.vector(row).to_vec()))
}

/// Uniform draw from ranks `[lo, hi)` of `r_star`'s neighbors. When fewer
/// than `lo + 1` rows exist, the last band of width `hi - lo` is used
/// instead and the returned flag is set.
pub fn sample_initial(
    index: &EmbeddingIndex,
    r_star: &[f64],
    (lo, hi): (usize, usize),
    rng: &mut Rng,
) -> (usize, Vec<f64>, bool) {
    let mut band = index.neighbor_range(r_star, lo, hi);
    let mut fallback = false;
    if band.is_empty() {
        let width = hi - lo;
        band = index.neighbor_range(r_star, index.len().saturating_sub(width), index.len());
        fallback = true;
    }
    let pick = band.choose(rng).expect("non-empty index");
    (pick.row, index.vector(pick.row).to_vec(), fallback)
}

/// Draws one of `rows` with probability softmax(<v_row, r*> / τ).
pub fn softmax_pick(
    index: &EmbeddingIndex,
    rows: &[usize],
    r_star: &[f64],
    temperature: f64,
    rng: &mut Rng,
) -> usize {
    let logits: Vec<f64> = rows
        .iter()
        .map(|&r| index.score(r, r_star) / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let dist = WeightedIndex::new(&weights).expect("max logit has weight 1");
    rows[dist.sample(rng)]
}

/// Ablation generator: each turn's slate is a uniformly drawn collection.
pub fn random_sequence(
    corpus: &Corpus,
    turns: usize,
    id: String,
    rng: &mut Rng,
) -> GeneratedSequence {
    let colls: Vec<_> = corpus.collections().collect();
    let turns: Vec<SlateTurn> = (0..turns)
        .map(|t| {
            let z = colls.choose(rng).expect("corpus has collections");
            SlateTurn {
                slate: z.item_ids.clone(),
                ptype: if t == 0 {
                    PrefType::Init
                } else {
                    PrefType::More
                },
                source_collection: z.id.clone(),
                alpha: 0.0,
                beta: 1.0,
                target_similarity: None,
                degenerate: false,
            }
        })
        .collect();
    let first = turns
        .first()
        .map(|t| t.source_collection.clone())
        .unwrap_or_default();
    let last = turns
        .last()
        .map(|t| t.source_collection.clone())
        .unwrap_or_default();
    GeneratedSequence {
        id,
        generator: Generator::Random,
        target_collection: last,
        initial_collection: first,
        initial_fallback: false,
        turns,
        user_vectors: Vec::new(),
        target_vector: Vec::new(),
    }
}

pub fn random_sequences(
    corpus: &Corpus,
    turns: usize,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Vec<GeneratedSequence> {
    exec.map_range(count, |i| {
        random_sequence(
            corpus,
            turns,
            sequence_id(i),
            &mut rng::stream(seed, i as u64),
        )
    })
}

pub fn write_sequences(seqs: &[GeneratedSequence], mut w: impl Write) -> Result<(), SeqGenError> {
    for s in seqs {
        let line = serde_json::to_string(s).map_err(|e| SeqGenError::Record(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequences(r: impl BufRead) -> Result<Vec<GeneratedSequence>, SeqGenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| SeqGenError::Record(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
