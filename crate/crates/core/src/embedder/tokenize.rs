use std::hash::Hasher;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Item, ItemCollection};
use crate::rng::Rng;

/// Default number of hash buckets.
pub const DEFAULT_VOCAB: usize = 1 << 16;
/// Default maximum sequence length.
pub const DEFAULT_MAX_LEN: usize = 256;
/// Bucket reserved for the segment separator. Words never hash here.
pub const SEP_TOKEN: u32 = 0;
/// Literal separator used in the textual form of queries.
pub const SEP_TEXT: &str = "[SEP]";

/// Token ids for one query or item. Never longer than the tokenizer's
/// `max_len`; the tail is cut when input is too long.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }
}

/// Splits on anything that is not alphanumeric and lowercases.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Hashing tokenizer: lowercased alphanumeric words hashed (FNV-1a) into
/// `vocab_size - 1` buckets, with bucket 0 reserved for `[SEP]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tokenizer {
    pub vocab_size: usize,
    pub max_len: usize,
    /// Append quantized feature-vector tokens to item sequences.
    pub feature_tokens: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB,
            max_len: DEFAULT_MAX_LEN,
            feature_tokens: true,
        }
    }
}

impl Tokenizer {
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    pub fn token_id(&self, word: &str) -> u32 {
        let mut h = fnv::FnvHasher::default();
        h.write(word.as_bytes());
        1 + (h.finish() % (self.vocab_size as u64 - 1)) as u32
    }

    /// Appends the tokens of `text` to `out`.
    pub fn push_text(&self, text: &str, out: &mut Vec<u32>) {
        out.extend(words(text).map(|w| self.token_id(&w)));
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut out = Vec::new();
        self.push_text(text, &mut out);
        self.finish(out)
    }

    /// Applies the length cap.
    pub fn finish(&self, mut ids: Vec<u32>) -> TokenSequence {
        ids.truncate(self.max_len);
        TokenSequence(ids)
    }

    pub fn featurize_item(&self, item: &Item) -> TokenSequence {
        let mut out = Vec::new();
        self.push_item(item, &mut out);
        self.finish(out)
    }

    pub(crate) fn push_item(&self, item: &Item, out: &mut Vec<u32>) {
        self.push_text(&item_text(item), out);
        if self.feature_tokens {
            if let Some(features) = &item.features {
                for (dim, value) in features.iter().enumerate() {
                    out.push(self.token_id(&feature_word(dim, *value)));
                }
            }
        }
    }

    /// Collection description followed by `n_seed` of its items, drawn
    /// without replacement from `rng` in draw order.
    pub fn featurize_collection_query(
        &self,
        coll: &ItemCollection,
        corpus: &Corpus,
        n_seed: usize,
        rng: &mut Rng,
    ) -> TokenSequence {
        let mut out = Vec::new();
        self.push_text(&collection_text(coll), &mut out);
        let n = n_seed.min(coll.item_ids.len());
        for idx in index::sample(rng, coll.item_ids.len(), n) {
            if let Some(item) = corpus.item(&coll.item_ids[idx]) {
                self.push_item(item, &mut out);
            }
        }
        self.finish(out)
    }
}

/// Title, artists and album joined by spaces.
pub fn item_text(item: &Item) -> String {
    let mut parts = Vec::with_capacity(2 + item.artists.len());
    parts.push(item.title.as_str());
    parts.extend(item.artists.iter().map(String::as_str));
    if let Some(album) = item.album.as_deref().filter(|a| !a.is_empty()) {
        parts.push(album);
    }
    parts.join(" ")
}

/// Title and description of a collection.
pub fn collection_text(coll: &ItemCollection) -> String {
    format!("{} {}", coll.title, coll.description)
}

/// Four quantization bins with edges at -0.5, 0 and 0.5.
fn feature_word(dim: usize, value: f64) -> String {
    let bin = match value {
        v if v < -0.5 => 0,
        v if v < 0.0 => 1,
        v if v < 0.5 => 2,
        _ => 3,
    };
    format!("feat{dim}q{bin}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn item(id: &str, title: &str, artists: &[&str], album: Option<&str>) -> Item {
        Item {
            id: id.into(),
            title: title.into(),
            artists: artists.iter().map(|s| s.to_string()).collect(),
            album: album.map(str::to_string),
            features: None,
        }
    }

    #[test]
    fn item_tokens_are_title_then_artists() {
        let tok = Tokenizer::default();
        let seq = tok.featurize_item(&item("x", "Run", &["A"], None));
        assert_eq!(seq.0, vec![tok.token_id("run"), tok.token_id("a")]);
    }

    #[test]
    fn id_does_not_affect_tokens() {
        let tok = Tokenizer::default();
        let a = tok.featurize_item(&item("x", "Run Fast", &["A"], Some("Dash")));
        let b = tok.featurize_item(&item("y", "Run Fast", &["A"], Some("Dash")));
        assert_eq!(a, b);
    }

    #[test]
    fn empty_album_adds_nothing() {
        let tok = Tokenizer::default();
        let none = tok.featurize_item(&item("x", "Run", &["A"], None));
        let empty = tok.featurize_item(&item("x", "Run", &["A"], Some("")));
        assert_eq!(none, empty);
        assert_eq!(none.len(), 2);
    }

    #[test]
    fn feature_tokens_are_optional() {
        let mut it = item("x", "Run", &["A"], None);
        it.features = Some(vec![-1.0, 0.2]);
        let tok = Tokenizer::default();
        let seq = tok.featurize_item(&it);
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.0[2], tok.token_id("feat0q0"));
        assert_eq!(seq.0[3], tok.token_id("feat1q2"));
        let plain = Tokenizer {
            feature_tokens: false,
            ..tok
        };
        assert_eq!(plain.featurize_item(&it).len(), 2);
    }

    #[test]
    fn words_never_hit_separator_bucket() {
        let tok = Tokenizer::with_vocab(7);
        for w in ["a", "b", "sep", "hello", "zz", "0", "x9"] {
            let id = tok.token_id(w);
            assert!(id != SEP_TOKEN && (id as usize) < 7);
        }
    }

    #[test]
    fn truncates_from_the_end() {
        let tok = Tokenizer {
            max_len: 3,
            ..Tokenizer::default()
        };
        let seq = tok.tokenize("one two three four five");
        assert_eq!(seq.0, tok.tokenize("one two three").0);
    }

    #[test]
    fn collection_query_seed_sampling() {
        let corpus = crate::corpus::make_fixture_corpus(2000, 20, 4).unwrap();
        let tok = Tokenizer {
            feature_tokens: false,
            ..Tokenizer::default()
        };
        let coll = corpus
            .collections()
            .find(|c| c.item_ids.len() >= 6)
            .unwrap();
        let desc = tok.tokenize(&collection_text(coll));

        let q0 = tok.featurize_collection_query(coll, &corpus, 0, &mut seeded(1));
        assert_eq!(q0, desc);

        let q5a = tok.featurize_collection_query(coll, &corpus, 5, &mut seeded(9));
        let q5b = tok.featurize_collection_query(coll, &corpus, 5, &mut seeded(9));
        assert_eq!(q5a, q5b);
        assert!(q5a.0.starts_with(&desc.0));

        // Exhaustion: every item's tokens appear exactly once.
        let all = tok.featurize_collection_query(coll, &corpus, 1000, &mut seeded(2));
        let expected: usize = desc.len()
            + coll
                .item_ids
                .iter()
                .map(|id| tok.featurize_item(corpus.item(id).unwrap()).len())
                .sum::<usize>();
        assert_eq!(all.len(), expected.min(tok.max_len));
    }
}
