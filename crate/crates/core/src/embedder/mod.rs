//! The item collection dual encoder.
//!
//! Items and queries are tokenized with a hashing tokenizer, pooled as the
//! mean of their token embeddings and L2-normalized. The same table serves
//! both towers. Training minimizes an in-batch contrastive loss with plain
//! SGD using closed-form gradients; retrieval is exact brute-force cosine
//! search over an [`EmbeddingIndex`].

mod encoder;
mod index;
mod tokenize;

pub use encoder::{
    contrastive_loss, contrastive_loss_grad, dot, train_contrastive, Encoded, EncoderParams, Pair,
    SgdConfig, SparseGrad,
};
pub use index::{EmbeddingIndex, Neighbor, PayloadKind, UNIT_TOLERANCE};
pub use tokenize::{
    collection_text, item_text, words, TokenSequence, Tokenizer, DEFAULT_MAX_LEN, DEFAULT_VOCAB,
    SEP_TEXT, SEP_TOKEN,
};

use rand::seq::index as sample_index;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ItemCollection};
use crate::exec::Execution;
use crate::rng;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("bad shape: {0}")]
    Shape(String),
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("vector for `{id}` has norm {norm}, expected 1")]
    NotUnit { id: String, norm: f64 },
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Settings for training the item collection dual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualEncoderConfig {
    pub dim: usize,
    pub tokenizer: Tokenizer,
    pub sgd: SgdConfig,
    /// Items sampled into each collection query.
    pub n_seed: usize,
    /// Seed for the initial embedding table.
    pub init_seed: u64,
}

impl Default for DualEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            tokenizer: Tokenizer::default(),
            sgd: SgdConfig::desk(),
            n_seed: 5,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
    pub steps: usize,
}

/// One (collection query, random member item) pair per distinct collection.
fn collection_batch(
    corpus: &Corpus,
    collections: &[&ItemCollection],
    tokenizer: &Tokenizer,
    n_seed: usize,
    batch_size: usize,
    rng: &mut rng::Rng,
) -> Vec<Pair> {
    sample_index::sample(rng, collections.len(), batch_size)
        .into_iter()
        .map(|c| {
            let coll = collections[c];
            let query = tokenizer.featurize_collection_query(coll, corpus, n_seed, rng);
            let item_id = coll
                .item_ids
                .choose(rng)
                .expect("collections are non-empty");
            let item = tokenizer.featurize_item(corpus.item(item_id).expect("validated corpus"));
            (query, item)
        })
        .collect()
}

/// Trains the collection/item dual encoder on (collection query, member item)
/// pairs with in-batch negatives.
pub fn train_dual_encoder(
    corpus: &Corpus,
    config: &DualEncoderConfig,
) -> Result<(EncoderParams, TrainReport), EmbedError> {
    let collections: Vec<&ItemCollection> = corpus.collections().collect();
    let batch = config.sgd.batch_size;
    if batch == 0 || collections.len() < batch {
        return Err(EmbedError::InsufficientData(format!(
            "{} collections for batch size {batch}",
            collections.len()
        )));
    }
    let mut params =
        EncoderParams::random(config.tokenizer.vocab_size, config.dim, config.init_seed)?;
    let tok = &config.tokenizer;
    let probe = collection_batch(
        corpus,
        &collections,
        tok,
        config.n_seed,
        batch,
        &mut rng::stream(config.sgd.seed, 2),
    );
    let (probe_q, probe_x): (Vec<_>, Vec<_>) = probe.into_iter().unzip();
    let probe_loss =
        |p: &EncoderParams| contrastive_loss(p, &probe_q, &probe_x, config.sgd.temperature);
    let initial_probe_loss = probe_loss(&params);
    train_contrastive(
        &mut params,
        &config.sgd,
        |rng| collection_batch(corpus, &collections, tok, config.n_seed, batch, rng),
        |_, _, _| {},
    );
    let final_probe_loss = probe_loss(&params);
    Ok((
        params,
        TrainReport {
            initial_probe_loss,
            final_probe_loss,
            steps: config.sgd.steps,
        },
    ))
}

/// Encodes many sequences.
pub fn encode_batch(
    params: &EncoderParams,
    seqs: &[TokenSequence],
    exec: Execution,
) -> Vec<Vec<f64>> {
    exec.map_slice(seqs, |s| params.encode(s).vector)
}

/// Index of every item in the corpus, in id order.
pub fn index_items(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    corpus: &Corpus,
    exec: Execution,
) -> Result<EmbeddingIndex, EmbedError> {
    let items: Vec<_> = corpus.items().collect();
    let vectors = exec.map_slice(&items, |item| {
        params.encode(&tokenizer.featurize_item(item)).vector
    });
    EmbeddingIndex::build(
        items.iter().map(|i| i.id.clone()).collect(),
        vectors,
        PayloadKind::Item,
    )
}

/// Index of every collection, each embedded from its description plus
/// `n_seed` sampled member items. Collection `i` (in id order) samples from
/// its own stream of `seed`.
pub fn index_collections(
    params: &EncoderParams,
    tokenizer: &Tokenizer,
    corpus: &Corpus,
    n_seed: usize,
    seed: u64,
    exec: Execution,
) -> Result<EmbeddingIndex, EmbedError> {
    let colls: Vec<_> = corpus.collections().collect();
    let vectors = exec.map_range(colls.len(), |i| {
        let mut rng = rng::stream(seed, i as u64);
        let seq = tokenizer.featurize_collection_query(colls[i], corpus, n_seed, &mut rng);
        params.encode(&seq).vector
    });
    EmbeddingIndex::build(
        colls.iter().map(|c| c.id.clone()).collect(),
        vectors,
        PayloadKind::Collection,
    )
}
