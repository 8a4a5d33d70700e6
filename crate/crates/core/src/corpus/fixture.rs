//! Deterministic synthetic corpora.
//!
//! Every item has a latent genre, mood and activity. Those latent attributes
//! never appear verbatim in item text: a mood shows up through cue words in
//! the title, an activity through cue words in the album, and a genre through
//! the artist (each artist plays one genre) and the optional feature vector.
//! Theme collections group items sharing two (or three) attributes and are
//! described with the attribute names, so an embedding model has something to
//! learn that plain lexical matching cannot shortcut.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Corpus, CorpusError, Item, ItemCollection, DEFAULT_TYPES, THEME};
use crate::rng;

const GENRES: [&str; 12] = [
    "pop", "rock", "jazz", "blues", "soul", "funk", "metal", "folk", "country", "reggae", "techno",
    "hiphop",
];

const MOODS: [(&str, [&str; 3]); 10] = [
    ("happy", ["sunshine", "smile", "joy"]),
    ("sad", ["tears", "lonely", "grey"]),
    ("chill", ["breeze", "lazy", "hammock"]),
    ("upbeat", ["bounce", "jump", "spark"]),
    ("dreamy", ["clouds", "haze", "stardust"]),
    ("dark", ["shadow", "midnight", "raven"]),
    ("romantic", ["kiss", "heart", "roses"]),
    ("mellow", ["velvet", "amber", "soft"]),
    ("energetic", ["thunder", "voltage", "rush"]),
    ("nostalgic", ["memories", "yesterday", "polaroid"]),
];

const ACTIVITIES: [(&str, [&str; 3]); 8] = [
    ("workout", ["gym", "sweat", "reps"]),
    ("study", ["library", "notes", "desk"]),
    ("party", ["dancefloor", "confetti", "nightclub"]),
    ("sleep", ["pillow", "lullaby", "dusk"]),
    ("driving", ["highway", "roadtrip", "mileage"]),
    ("cooking", ["kitchen", "spices", "recipe"]),
    ("running", ["sprint", "marathon", "stride"]),
    ("dinner", ["candlelight", "wine", "table"]),
];

const NOUNS: [&str; 32] = [
    "harbor", "river", "garden", "window", "city", "mirror", "station", "forest", "ocean",
    "avenue", "letter", "engine", "island", "valley", "bridge", "signal", "lantern", "meadow",
    "canyon", "orbit", "circus", "temple", "rooftop", "tunnel", "comet", "pocket", "anchor",
    "paper", "silver", "crystal", "garage", "motel",
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "vi", "ra", "ne", "so", "ta", "mi", "zu", "be", "do", "fa", "ri", "xo", "pe", "lu",
    "ma", "ko", "sa", "ve", "ni", "ju", "ro", "ha",
];

/// Knobs for [`make_fixture_corpus_with`].
#[derive(Debug, Clone)]
pub struct FixtureConfig {
    /// Length of the optional per-item feature vector; 0 disables features.
    pub feature_dim: usize,
    /// Upper bound on theme collection size.
    pub max_collection_size: usize,
    /// Fraction of items without an album.
    pub missing_album_rate: f64,
    /// Items per artist, on average.
    pub items_per_artist: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            feature_dim: 4,
            max_collection_size: 30,
            missing_album_rate: 0.1,
            items_per_artist: 8,
        }
    }
}

/// A coherent synthetic corpus of `n_items` items and `n_collections` theme
/// collections. Identical arguments give identical corpora.
pub fn make_fixture_corpus(
    n_items: usize,
    n_collections: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    make_fixture_corpus_with(n_items, n_collections, seed, &FixtureConfig::default())
}

#[derive(Clone, Copy)]
struct Latent {
    genre: usize,
    mood: usize,
    activity: usize,
}

#[derive(Clone, Copy)]
enum Combo {
    GenreMood(usize, usize),
    MoodActivity(usize, usize),
    GenreActivity(usize, usize),
    All(usize, usize, usize),
}

impl Combo {
    fn matches(self, l: &Latent) -> bool {
        match self {
            Combo::GenreMood(g, m) => l.genre == g && l.mood == m,
            Combo::MoodActivity(m, a) => l.mood == m && l.activity == a,
            Combo::GenreActivity(g, a) => l.genre == g && l.activity == a,
            Combo::All(g, m, a) => l.genre == g && l.mood == m && l.activity == a,
        }
    }

    /// Looser predicate used when no item matches exactly.
    fn matches_loosely(self, l: &Latent) -> bool {
        match self {
            Combo::GenreMood(g, _) | Combo::GenreActivity(g, _) | Combo::All(g, _, _) => {
                l.genre == g
            }
            Combo::MoodActivity(m, _) => l.mood == m,
        }
    }

    fn title_and_description(self, variant: usize) -> (String, String) {
        let g = |i: usize| GENRES[i];
        let m = |i: usize| MOODS[i].0;
        let a = |i: usize| ACTIVITIES[i].0;
        match self {
            Combo::GenreMood(gi, mi) => (
                format!("{} {}", cap(m(mi)), cap(g(gi))),
                [
                    format!("{} {} tracks", m(mi), g(gi)),
                    format!("a mix of {} {}", m(mi), g(gi)),
                    format!("{} {} all day long", m(mi), g(gi)),
                ][variant % 3]
                    .clone(),
            ),
            Combo::MoodActivity(mi, ai) => (
                format!("{} {}", cap(m(mi)), cap(a(ai))),
                [
                    format!("{} songs for {}", m(mi), a(ai)),
                    format!("{} vibes for your {}", m(mi), a(ai)),
                    format!("keep it {} during {}", m(mi), a(ai)),
                ][variant % 3]
                    .clone(),
            ),
            Combo::GenreActivity(gi, ai) => (
                format!("{} {}", cap(g(gi)), cap(a(ai))),
                [
                    format!("{} for {}", g(gi), a(ai)),
                    format!("{} picks for your {}", g(gi), a(ai)),
                    format!("the best {} for {}", g(gi), a(ai)),
                ][variant % 3]
                    .clone(),
            ),
            Combo::All(gi, mi, ai) => (
                format!("{} {} {}", cap(m(mi)), cap(g(gi)), cap(a(ai))),
                format!("{} {} for {}", m(mi), g(gi), a(ai)),
            ),
        }
    }
}

fn cap(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn artist_name(rng: &mut rng::Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let mut word = |n: usize| -> String {
            let s: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            cap(&s)
        };
        let first = word(2);
        let last = word(3);
        let name = format!("{first} {last}");
        if taken.insert(name.clone()) {
            return name;
        }
    }
}

pub fn make_fixture_corpus_with(
    n_items: usize,
    n_collections: usize,
    seed: u64,
    config: &FixtureConfig,
) -> Result<Corpus, CorpusError> {
    if n_collections == 0 || n_items < n_collections {
        return Err(CorpusError::Argument(format!(
            "need n_items >= n_collections >= 1, got {n_items} items and {n_collections} collections"
        )));
    }
    let mut rng = rng::seeded(seed);

    let n_artists = (n_items / config.items_per_artist.max(1)).max(GENRES.len());
    let mut taken = BTreeSet::new();
    let artists: Vec<(String, usize)> = (0..n_artists)
        .map(|i| (artist_name(&mut rng, &mut taken), i % GENRES.len()))
        .collect();
    let mut artists_by_genre: Vec<Vec<usize>> = vec![Vec::new(); GENRES.len()];
    for (i, (_, g)) in artists.iter().enumerate() {
        artists_by_genre[*g].push(i);
    }

    let centroids: Vec<Vec<f64>> = (0..GENRES.len())
        .map(|_| {
            (0..config.feature_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 0.25).expect("valid std");

    let mut latents = Vec::with_capacity(n_items);
    let mut items = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let latent = Latent {
            genre: rng.random_range(0..GENRES.len()),
            mood: rng.random_range(0..MOODS.len()),
            activity: rng.random_range(0..ACTIVITIES.len()),
        };
        let artist = *artists_by_genre[latent.genre].choose(&mut rng).unwrap();
        let title = format!(
            "{} {}",
            cap(MOODS[latent.mood].1.choose(&mut rng).unwrap()),
            cap(NOUNS.choose(&mut rng).unwrap())
        );
        let album = if rng.random_bool(config.missing_album_rate) {
            None
        } else {
            Some(format!(
                "{} {}",
                cap(ACTIVITIES[latent.activity].1.choose(&mut rng).unwrap()),
                cap(NOUNS.choose(&mut rng).unwrap())
            ))
        };
        let features = (config.feature_dim > 0).then(|| {
            centroids[latent.genre]
                .iter()
                .map(|c| c + noise.sample(&mut rng))
                .collect()
        });
        items.push(Item {
            id: format!("item{i:05}"),
            title,
            artists: vec![artists[artist].0.clone()],
            album,
            features,
        });
        latents.push(latent);
    }

    let mut pairs = Vec::new();
    for g in 0..GENRES.len() {
        for m in 0..MOODS.len() {
            pairs.push(Combo::GenreMood(g, m));
        }
    }
    for m in 0..MOODS.len() {
        for a in 0..ACTIVITIES.len() {
            pairs.push(Combo::MoodActivity(m, a));
        }
    }
    for g in 0..GENRES.len() {
        for a in 0..ACTIVITIES.len() {
            pairs.push(Combo::GenreActivity(g, a));
        }
    }
    pairs.shuffle(&mut rng);
    let mut triples = Vec::new();
    for g in 0..GENRES.len() {
        for m in 0..MOODS.len() {
            for a in 0..ACTIVITIES.len() {
                triples.push(Combo::All(g, m, a));
            }
        }
    }
    triples.shuffle(&mut rng);
    let combos: Vec<Combo> = pairs.into_iter().chain(triples).collect();

    let mut collections = Vec::with_capacity(n_collections);
    for (c, combo) in combos.iter().cycle().take(n_collections).enumerate() {
        let mut members: Vec<usize> = (0..n_items)
            .filter(|&i| combo.matches(&latents[i]))
            .collect();
        if members.is_empty() {
            members = (0..n_items)
                .filter(|&i| combo.matches_loosely(&latents[i]))
                .collect();
            members.shuffle(&mut rng);
            members.truncate(5);
        }
        if members.is_empty() {
            members.push(rng.random_range(0..n_items));
        }
        if members.len() > config.max_collection_size {
            members.shuffle(&mut rng);
            members.truncate(config.max_collection_size);
        }
        members.sort_unstable();
        let variant = rng.random_range(0..3);
        let (title, description) = combo.title_and_description(variant);
        collections.push(ItemCollection {
            id: format!("coll{c:04}"),
            title,
            description,
            ctype: THEME.to_string(),
            item_ids: members.iter().map(|&i| items[i].id.clone()).collect(),
        });
    }

    Corpus::new(
        items,
        collections,
        DEFAULT_TYPES.iter().map(|s| s.to_string()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_corpus;

    fn bytes(c: &Corpus) -> Vec<u8> {
        let mut buf = Vec::new();
        write_corpus(c, &mut buf).unwrap();
        buf
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_fixture_corpus(2000, 200, 7).unwrap();
        let b = make_fixture_corpus(2000, 200, 7).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = make_fixture_corpus(2000, 200, 8).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn rejects_more_collections_than_items() {
        assert!(matches!(
            make_fixture_corpus(10, 20, 1),
            Err(CorpusError::Argument(_))
        ));
        assert!(make_fixture_corpus(10, 0, 1).is_err());
    }

    #[test]
    fn collections_non_empty_and_typed() {
        let corpus = make_fixture_corpus(100, 10, 1).unwrap();
        assert_eq!(corpus.num_collections(), 10);
        for coll in corpus.collections() {
            assert!(!coll.item_ids.is_empty());
            assert!(corpus.types().contains(&coll.ctype));
        }
    }

    #[test]
    fn descriptions_are_short() {
        // Templated utterances quote descriptions; keep them well under the
        // 50-character overlap filter.
        let corpus = make_fixture_corpus(2000, 400, 2).unwrap();
        for coll in corpus.collections() {
            assert!(
                coll.description.chars().count() <= 40,
                "{}",
                coll.description
            );
        }
    }

    #[test]
    fn tiny_corpora_still_valid() {
        for seed in 0..20 {
            let corpus = make_fixture_corpus(5, 5, seed).unwrap();
            assert_eq!(corpus.num_collections(), 5);
        }
    }
}
