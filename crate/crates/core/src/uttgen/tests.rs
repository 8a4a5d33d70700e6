use super::*;
use crate::corpus::{derive_artist_collections, make_fixture_corpus, ARTIST, THEME};
use crate::embedder::{index_collections, index_items, EmbeddingIndex, EncoderParams, Tokenizer};
use crate::seqgen::{SlateTurn, WalkConfig};

struct World {
    corpus: Corpus,
    colls: EmbeddingIndex,
    items: EmbeddingIndex,
}

fn world() -> World {
    let corpus = derive_artist_collections(&make_fixture_corpus(400, 40, 3).unwrap());
    let tok = Tokenizer::with_vocab(4096);
    let params = EncoderParams::random(4096, 16, 1).unwrap();
    let colls = index_collections(&params, &tok, &corpus, 5, 0, Execution::Sequential).unwrap();
    let items = index_items(&params, &tok, &corpus, Execution::Sequential).unwrap();
    World {
        corpus,
        colls,
        items,
    }
}

fn dataset(w: &World, count: usize, source: UtteranceSource<'_>, seed: u64) -> Dataset {
    let walker = Walker::new(&w.corpus, &w.colls, &w.items, WalkConfig::default()).unwrap();
    let config = DatasetConfig {
        seed,
        ..DatasetConfig::default()
    };
    generate_dataset(
        &walker,
        &w.corpus,
        count,
        source,
        &config,
        Execution::Parallel,
    )
    .unwrap()
}

fn bytes(convs: &[Conversation]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_conversations(convs, &mut buf).unwrap();
    buf
}

#[test]
fn system_templates() {
    assert_eq!(
        render_system_response(PrefType::More, THEME, "Cardio Pop desc").unwrap(),
        "Of course! Let me add some songs described as Cardio Pop desc. What else?"
    );
    assert_eq!(
        render_system_response(PrefType::Less, THEME, "d").unwrap(),
        "Got it! Let me remove some songs described as d. What else?"
    );
    assert!(render_system_response(PrefType::Init, ARTIST, "Lady Gaga")
        .unwrap()
        .contains("Lady Gaga"));
    let err = render_system_response(PrefType::Init, "mood", "x").unwrap_err();
    assert!(
        matches!(&err, UttGenError::MissingTemplate { registered, .. } if registered.contains("init/theme"))
    );
}

#[test]
fn placeholder_count_is_checked() {
    assert!(ResponseTemplate::new(PrefType::More, THEME, "no slot").is_err());
    assert!(ResponseTemplate::new(PrefType::More, THEME, "<description> <description>").is_err());
    assert!(ResponseTemplate::new(PrefType::More, THEME, "add <description>").is_ok());
}

#[test]
fn user_bank_is_rich_and_does_not_copy_system_text() {
    let user = TemplateBank::user();
    let system = TemplateBank::system();
    let d = "x".repeat(40);
    for key in system.keys() {
        let variants = user.variants(key.0, &key.1).unwrap();
        assert!(variants.len() >= 3, "{key:?}");
        let sys = system.render(key.0, &key.1, &d).unwrap();
        for v in variants {
            let u = v.render(&d);
            assert!(u.contains(&d));
            // Only the description itself (plus a separator) may be shared.
            assert!(
                longest_common_substring(&u, &sys) <= d.len() + 2,
                "{u} / {sys}"
            );
        }
    }
}

fn turns(w: &World, n: usize) -> Vec<SlateTurn> {
    let walker = Walker::new(
        &w.corpus,
        &w.colls,
        &w.items,
        WalkConfig {
            turns: n,
            ..WalkConfig::default()
        },
    )
    .unwrap();
    walker
        .generate_sequence("s".into(), &mut rng::seeded(4))
        .unwrap()
        .turns
}

#[test]
fn partial_conversation_structure() {
    let w = world();
    for t in [1, 6] {
        let seq = turns(&w, t);
        let p = build_partial_conversation(&seq, &w.corpus, &TemplateBank::system()).unwrap();
        assert_eq!(p.turns.len(), 2 * t);
        assert_eq!(p.masks(), t);
        for (i, slot) in p.turns.iter().enumerate() {
            let user = i % 2 == 0;
            assert_eq!(slot.role, if user { Role::User } else { Role::System });
            assert_eq!(slot.text.is_none(), user);
        }
        let again = build_partial_conversation(&seq, &w.corpus, &TemplateBank::system()).unwrap();
        assert_eq!(p, again);
    }
}

#[test]
fn template_utterances_quote_descriptions() {
    let w = world();
    let seq = turns(&w, 6);
    let bank = TemplateBank::user();
    let a = template_utterances(&seq, &w.corpus, &bank, &mut rng::seeded(1)).unwrap();
    let b = template_utterances(&seq, &w.corpus, &bank, &mut rng::seeded(1)).unwrap();
    assert_eq!(a, b);
    for (u, turn) in a.iter().zip(&seq) {
        let coll = w.corpus.collection(&turn.source_collection).unwrap();
        assert!(u.contains(coll.display_description()), "{u}");
    }
}

#[test]
fn empty_dataset() {
    let w = world();
    let ds = dataset(&w, 0, UtteranceSource::Template, 1);
    assert!(ds.conversations.is_empty());
    assert_eq!(ds.stats, DatasetStats::default());
}

#[test]
fn accounting_and_clean_output() {
    let w = world();
    let ds = dataset(&w, 100, UtteranceSource::RandomDescription, 2);
    assert_eq!(ds.stats.conversations, 100);
    assert_eq!(ds.stats.total_turns, 600);
    assert_eq!(
        ds.stats.kept_turns + ds.stats.dropped_turns(),
        ds.stats.total_turns
    );
    // Random descriptions on artist turns miss the artist.
    assert!(ds.stats.dropped.get("missing-artist").copied().unwrap_or(0) > 0);

    let rules = FilterRules::default();
    let compiled = rules.compile().unwrap();
    for conv in &ds.conversations {
        assert!(conv.turns.len() <= 6);
        for turn in &conv.turns {
            let coll = w.corpus.collection(&turn.source_collection).unwrap();
            let artists = [coll.title.as_str()];
            assert!(compiled
                .violations(&TurnView {
                    utterance: &turn.utterance,
                    ctype: &coll.ctype,
                    artists: &artists,
                    system_response: &turn.system_response,
                })
                .is_empty());
        }
    }
}

#[test]
fn template_mode_passes_filters() {
    let w = world();
    let ds = dataset(&w, 100, UtteranceSource::Template, 3);
    assert_eq!(ds.stats.kept_turns, ds.stats.total_turns, "{:?}", ds.stats);
}

#[test]
fn dataset_bytes_are_reproducible() {
    let w = world();
    let a = dataset(&w, 100, UtteranceSource::Template, 5);
    let b = dataset(&w, 100, UtteranceSource::Template, 5);
    assert_eq!(bytes(&a.conversations), bytes(&b.conversations));
    let back = read_conversations(bytes(&a.conversations).as_slice()).unwrap();
    assert_eq!(back.len(), 100);
    assert_eq!(
        back[0].turns[0].utterance,
        a.conversations[0].turns[0].utterance
    );
    assert!(back[0].turns[0].system_response.is_empty());
}

struct Echo;

impl Inpainter for Echo {
    fn fill(&self, request: &InpaintRequest) -> Result<InpaintResponse, InpaintError> {
        Ok(InpaintResponse {
            text: format!("request with {} turns", request.turns.len()),
        })
    }
}

#[test]
fn inpainted_and_templated_share_slates() {
    let w = world();
    let t = dataset(&w, 30, UtteranceSource::Template, 6);
    let i = dataset(&w, 30, UtteranceSource::Inpaint(&Echo), 6);
    for (a, b) in t.conversations.iter().zip(&i.conversations) {
        assert_eq!(a.provenance, Provenance::Templated);
        assert_eq!(b.provenance, Provenance::Inpainted);
        let slates = |c: &Conversation| c.turns.iter().map(|t| t.slate.clone()).collect::<Vec<_>>();
        // Echo never names artists, so compare only turns both kept.
        let kept: Vec<usize> = (1..=6)
            .filter(|n| !b.dropped_turn_flags.iter().any(|d| d.turn == *n))
            .collect();
        let sa = slates(a);
        let sb = slates(b);
        assert_eq!(sb.len(), kept.len());
        for (j, n) in kept.iter().enumerate() {
            assert_eq!(sb[j], sa[n - 1]);
        }
    }
}

struct Failing;

impl Inpainter for Failing {
    fn fill(&self, _: &InpaintRequest) -> Result<InpaintResponse, InpaintError> {
        Err(InpaintError::Transport {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

#[test]
fn inpainter_errors_propagate() {
    let w = world();
    let walker = Walker::new(&w.corpus, &w.colls, &w.items, WalkConfig::default()).unwrap();
    let err = generate_dataset(
        &walker,
        &w.corpus,
        5,
        UtteranceSource::Inpaint(&Failing),
        &DatasetConfig::default(),
        Execution::Sequential,
    )
    .unwrap_err();
    assert!(matches!(
        err,
        UttGenError::Inpaint {
            source: InpaintError::Transport { attempts: 3, .. },
            ..
        }
    ));
}
