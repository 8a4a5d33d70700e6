//! Items, curated collections and the line-delimited corpus format.
//!
//! A corpus file holds one JSON record per line, discriminated by `kind`:
//!
//! ```text
//! {"kind":"types","types":["theme","artist"]}
//! {"kind":"item","id":"i1","title":"Run","artists":["A"],"album":"Dash"}
//! {"kind":"collection","id":"c1","title":"Cardio","description":"fast pop","ctype":"theme","item_ids":["i1"]}
//! ```
//!
//! The `types` record is optional; without it the registered collection types
//! are `theme` and `artist`. Unknown fields are ignored. Records may appear in
//! any order; references are resolved after the whole file is read.

mod fixture;

pub use fixture::{make_fixture_corpus, make_fixture_corpus_with, FixtureConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THEME: &str = "theme";
pub const ARTIST: &str = "artist";

/// Collection types registered when a corpus file declares none.
pub const DEFAULT_TYPES: [&str; 2] = [THEME, ARTIST];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("collection `{collection}` references unknown item `{item}`")]
    DanglingReference { collection: String, item: String },
    #[error("duplicate {what} id `{id}`")]
    DuplicateId { what: &'static str, id: String },
    #[error("item `{0}` has an empty title")]
    EmptyTitle(String),
    #[error("collection `{0}` has no items")]
    EmptyCollection(String),
    #[error("collection `{collection}` has unregistered type `{ctype}`")]
    UnknownType { collection: String, ctype: String },
    #[error("item `{id}` has {found}-dimensional features, expected {expected}")]
    FeatureDimension {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A retrievable unit, e.g. a song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub artists: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub album: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// A typed, described set of items, e.g. a playlist.
///
/// `item_ids` keeps the file order, but nothing downstream depends on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCollection {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub ctype: String,
    pub item_ids: Vec<String>,
}

impl ItemCollection {
    /// Text that stands for this collection in templates: the artist name for
    /// artist collections, the description otherwise (falling back to the
    /// title when the description is blank).
    pub fn display_description(&self) -> &str {
        if self.ctype == ARTIST || self.description.trim().is_empty() {
            &self.title
        } else {
            &self.description
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Types { types: Vec<String> },
    Item(Item),
    Collection(ItemCollection),
}

/// Items and collections with referential integrity. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    items: BTreeMap<String, Item>,
    collections: BTreeMap<String, ItemCollection>,
    types: BTreeSet<String>,
}

impl Corpus {
    /// Validates and assembles a corpus.
    pub fn new(
        items: impl IntoIterator<Item = Item>,
        collections: impl IntoIterator<Item = ItemCollection>,
        types: impl IntoIterator<Item = String>,
    ) -> Result<Self, CorpusError> {
        let mut item_map = BTreeMap::new();
        let mut feature_dim = None;
        for item in items {
            check_item(&item, &mut feature_dim)?;
            if item_map.contains_key(&item.id) {
                return Err(CorpusError::DuplicateId {
                    what: "item",
                    id: item.id,
                });
            }
            item_map.insert(item.id.clone(), item);
        }
        let types: BTreeSet<String> = types.into_iter().collect();
        let mut coll_map = BTreeMap::new();
        for coll in collections {
            if coll_map.contains_key(&coll.id) {
                return Err(CorpusError::DuplicateId {
                    what: "collection",
                    id: coll.id,
                });
            }
            coll_map.insert(coll.id.clone(), coll);
        }
        let corpus = Corpus {
            items: item_map,
            collections: coll_map,
            types,
        };
        corpus.check_collections()?;
        Ok(corpus)
    }

    fn check_collections(&self) -> Result<(), CorpusError> {
        for coll in self.collections.values() {
            if !self.types.contains(&coll.ctype) {
                return Err(CorpusError::UnknownType {
                    collection: coll.id.clone(),
                    ctype: coll.ctype.clone(),
                });
            }
            if coll.item_ids.is_empty() {
                return Err(CorpusError::EmptyCollection(coll.id.clone()));
            }
            if let Some(missing) = coll
                .item_ids
                .iter()
                .find(|id| !self.items.contains_key(*id))
            {
                return Err(CorpusError::DanglingReference {
                    collection: coll.id.clone(),
                    item: missing.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &Item> {
        self.items.values()
    }

    pub fn collections(&self) -> impl ExactSizeIterator<Item = &ItemCollection> {
        self.collections.values()
    }

    pub fn types(&self) -> &BTreeSet<String> {
        &self.types
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn collection(&self, id: &str) -> Option<&ItemCollection> {
        self.collections.get(id)
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_collections(&self) -> usize {
        self.collections.len()
    }

    pub fn collections_of_type<'a>(
        &'a self,
        ctype: &'a str,
    ) -> impl Iterator<Item = &'a ItemCollection> + 'a {
        self.collections.values().filter(move |c| c.ctype == ctype)
    }

    /// Shared feature dimension, if any item carries features.
    pub fn feature_dim(&self) -> Option<usize> {
        self.items
            .values()
            .find_map(|i| i.features.as_ref().map(Vec::len))
    }
}

fn check_item(item: &Item, feature_dim: &mut Option<usize>) -> Result<(), CorpusError> {
    if item.title.trim().is_empty() {
        return Err(CorpusError::EmptyTitle(item.id.clone()));
    }
    if let Some(f) = &item.features {
        match *feature_dim {
            None => *feature_dim = Some(f.len()),
            Some(expected) if expected != f.len() => {
                return Err(CorpusError::FeatureDimension {
                    id: item.id.clone(),
                    expected,
                    found: f.len(),
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Reads a corpus from any line-delimited source.
pub fn read_corpus(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut items = Vec::new();
    let mut collections = Vec::new();
    let mut types: Option<Vec<String>> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        match record {
            Record::Types { types: t } => types.get_or_insert_with(Vec::new).extend(t),
            Record::Item(item) => items.push(item),
            Record::Collection(coll) => collections.push(coll),
        }
    }
    let types = types.unwrap_or_else(|| DEFAULT_TYPES.iter().map(|s| s.to_string()).collect());
    Corpus::new(items, collections, types)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}

/// Writes the corpus in canonical order: types, items by id, collections by id.
pub fn write_corpus(corpus: &Corpus, mut writer: impl Write) -> Result<(), CorpusError> {
    let types = Record::Types {
        types: corpus.types.iter().cloned().collect(),
    };
    writeln!(writer, "{}", to_json(&types))?;
    for item in corpus.items.values() {
        writeln!(writer, "{}", to_json(&Record::Item(item.clone())))?;
    }
    for coll in corpus.collections.values() {
        writeln!(writer, "{}", to_json(&Record::Collection(coll.clone())))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_corpus(corpus, BufWriter::new(File::create(path)?))
}

fn to_json(record: &Record) -> String {
    serde_json::to_string(record).expect("corpus records always serialize")
}

/// Adds one `artist` collection per distinct artist appearing in theme
/// collections, holding exactly that artist's items from those collections.
///
/// Collection ids are `artist:<name>`; title and description are the name.
/// Re-running on the output yields the same corpus.
pub fn derive_artist_collections(corpus: &Corpus) -> Corpus {
    let mut by_artist: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for coll in corpus.collections_of_type(THEME) {
        for item_id in &coll.item_ids {
            let item = &corpus.items[item_id];
            for artist in &item.artists {
                by_artist.entry(artist).or_default().insert(&item.id);
            }
        }
    }
    let mut out = corpus.clone();
    if by_artist.is_empty() {
        return out;
    }
    out.types.insert(ARTIST.to_string());
    for (artist, items) in by_artist {
        let coll = ItemCollection {
            id: format!("artist:{artist}"),
            title: artist.to_string(),
            description: artist.to_string(),
            ctype: ARTIST.to_string(),
            item_ids: items.into_iter().map(str::to_string).collect(),
        };
        out.collections.insert(coll.id.clone(), coll);
    }
    out
}

/// Collection ids partitioned into train / dev / test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles collection ids with `seed` and cuts them by `ratios`
/// (train, dev, test; normalized). Defaults elsewhere use 80/10/10.
pub fn split_collections(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<CollectionSplit, CorpusError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || a + b + c <= 0.0 {
        return Err(CorpusError::Argument(format!(
            "split ratios must be non-negative with positive sum, got {ratios:?}"
        )));
    }
    let mut ids: Vec<String> = corpus.collections.keys().cloned().collect();
    ids.shuffle(&mut crate::rng::seeded(seed));
    let n = ids.len() as f64;
    let total = a + b + c;
    let n_train = (n * a / total).round() as usize;
    let n_dev = ((n * b / total).round() as usize).min(ids.len() - n_train);
    let test = ids.split_off(n_train + n_dev);
    let dev = ids.split_off(n_train);
    Ok(CollectionSplit {
        train: ids,
        dev,
        test,
    })
}
