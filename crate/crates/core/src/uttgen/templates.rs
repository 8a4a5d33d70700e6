use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::UttGenError;
use crate::corpus::{Corpus, ARTIST, THEME};
use crate::rng::Rng;
use crate::seqgen::{PrefType, SlateTurn};

pub const PLACEHOLDER: &str = "<description>";

/// A response pattern for one (preference type, collection type) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub ptype: PrefType,
    pub ctype: String,
    pub pattern: String,
}

impl ResponseTemplate {
    pub fn new(ptype: PrefType, ctype: &str, pattern: &str) -> Result<Self, UttGenError> {
        let count = pattern.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(UttGenError::Template(format!(
                "pattern `{pattern}` has {count} placeholders, expected 1"
            )));
        }
        Ok(Self {
            ptype,
            ctype: ctype.to_string(),
            pattern: pattern.to_string(),
        })
    }

    pub fn render(&self, description: &str) -> String {
        self.pattern.replacen(PLACEHOLDER, description, 1)
    }
}

type Key = (PrefType, String);

/// Templates keyed by (preference type, collection type); each key holds one
/// or more variants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateBank {
    templates: BTreeMap<Key, Vec<ResponseTemplate>>,
}

impl TemplateBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, template: ResponseTemplate) {
        self.templates
            .entry((template.ptype, template.ctype.clone()))
            .or_default()
            .push(template);
    }

    fn from_table(table: &[(PrefType, &str, &[&str])]) -> Self {
        let mut bank = Self::new();
        for (ptype, ctype, patterns) in table {
            for p in *patterns {
                bank.register(ResponseTemplate::new(*ptype, ctype, p).expect("built-in template"));
            }
        }
        bank
    }

    /// The system-side templates.
    pub fn system() -> Self {
        Self::from_table(&[
            (
                PrefType::Init,
                THEME,
                &["Sure! Here are some songs described as <description>. What else?"],
            ),
            (
                PrefType::More,
                THEME,
                &["Of course! Let me add some songs described as <description>. What else?"],
            ),
            (
                PrefType::Less,
                THEME,
                &["Got it! Let me remove some songs described as <description>. What else?"],
            ),
            (
                PrefType::Init,
                ARTIST,
                &["Sure! Here are some songs by <description>. What else?"],
            ),
            (
                PrefType::More,
                ARTIST,
                &["Of course! Let me add some songs by <description>. What else?"],
            ),
            (
                PrefType::Less,
                ARTIST,
                &["Got it! Let me remove some songs by <description>. What else?"],
            ),
        ])
    }

    /// The user-side bank used for templated utterances.
    pub fn user() -> Self {
        Self::from_table(&[
            (
                PrefType::Init,
                THEME,
                &[
                    "I'm in the mood for <description>.",
                    "Can you start me off with <description>?",
                    "Put on something like <description> please.",
                    "Looking for <description> today.",
                ],
            ),
            (
                PrefType::More,
                THEME,
                &[
                    "I'd like more <description>.",
                    "Can you mix in <description> too?",
                    "Give me extra <description> please.",
                    "More of the <description> kind.",
                ],
            ),
            (
                PrefType::Less,
                THEME,
                &[
                    "Less <description> please.",
                    "Can you cut back on <description>?",
                    "Not so much <description> anymore.",
                    "Fewer tracks like <description>.",
                ],
            ),
            (
                PrefType::Init,
                ARTIST,
                &[
                    "Play me some <description>.",
                    "I want to hear <description>.",
                    "Start with tracks from <description>.",
                ],
            ),
            (
                PrefType::More,
                ARTIST,
                &[
                    "Can you add some <description>?",
                    "More from <description> please.",
                    "Throw in a few <description> tracks.",
                ],
            ),
            (
                PrefType::Less,
                ARTIST,
                &[
                    "Less <description> please.",
                    "Skip the <description> tracks for now.",
                    "Not so much <description>.",
                ],
            ),
        ])
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.templates.keys()
    }

    pub fn variants(
        &self,
        ptype: PrefType,
        ctype: &str,
    ) -> Result<&[ResponseTemplate], UttGenError> {
        self.templates
            .get(&(ptype, ctype.to_string()))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                let registered = self
                    .keys()
                    .map(|(p, c)| format!("{}/{c}", p.as_str()))
                    .collect::<Vec<_>>()
                    .join(", ");
                UttGenError::MissingTemplate {
                    ptype: ptype.as_str().to_string(),
                    ctype: ctype.to_string(),
                    registered,
                }
            })
    }

    /// Renders the first variant for the key.
    pub fn render(
        &self,
        ptype: PrefType,
        ctype: &str,
        description: &str,
    ) -> Result<String, UttGenError> {
        Ok(self.variants(ptype, ctype)?[0].render(description))
    }

    /// Renders a uniformly chosen variant for the key.
    pub fn render_random(
        &self,
        ptype: PrefType,
        ctype: &str,
        description: &str,
        rng: &mut Rng,
    ) -> Result<String, UttGenError> {
        let variants = self.variants(ptype, ctype)?;
        Ok(variants.choose(rng).expect("non-empty").render(description))
    }
}

pub fn render_system_response(
    ptype: PrefType,
    ctype: &str,
    description: &str,
) -> Result<String, UttGenError> {
    TemplateBank::system().render(ptype, ctype, description)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

/// One slot of a partial conversation. A user slot with no text is a mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub role: Role,
    pub text: Option<String>,
}

/// Alternating user/system slots; user slots start masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialConversation {
    pub turns: Vec<Slot>,
}

impl PartialConversation {
    pub fn masks(&self) -> usize {
        self.turns.iter().filter(|s| s.text.is_none()).count()
    }

    /// The rendered system response following user slot `t` (0-based).
    pub fn system_response(&self, t: usize) -> Option<&str> {
        self.turns.get(2 * t + 1).and_then(|s| s.text.as_deref())
    }
}

/// `(ptype, ctype, description)` of a turn's source collection.
pub(crate) fn turn_key<'c>(
    turn: &SlateTurn,
    corpus: &'c Corpus,
) -> Result<(PrefType, &'c str, &'c str), UttGenError> {
    let coll = corpus
        .collection(&turn.source_collection)
        .ok_or_else(|| UttGenError::UnknownCollection(turn.source_collection.clone()))?;
    Ok((turn.ptype, coll.ctype.as_str(), coll.display_description()))
}

pub fn build_partial_conversation(
    turns: &[SlateTurn],
    corpus: &Corpus,
    bank: &TemplateBank,
) -> Result<PartialConversation, UttGenError> {
    let mut slots = Vec::with_capacity(2 * turns.len());
    for turn in turns {
        let (ptype, ctype, description) = turn_key(turn, corpus)?;
        slots.push(Slot {
            role: Role::User,
            text: None,
        });
        slots.push(Slot {
            role: Role::System,
            text: Some(bank.render(ptype, ctype, description)?),
        });
    }
    Ok(PartialConversation { turns: slots })
}

/// One templated user utterance per turn, each quoting the turn's source
/// collection description.
pub fn template_utterances(
    turns: &[SlateTurn],
    corpus: &Corpus,
    bank: &TemplateBank,
    rng: &mut Rng,
) -> Result<Vec<String>, UttGenError> {
    turns
        .iter()
        .map(|turn| {
            let (ptype, ctype, description) = turn_key(turn, corpus)?;
            bank.render_random(ptype, ctype, description, rng)
        })
        .collect()
}

/// Like [`template_utterances`] but quoting the description of a uniformly
/// drawn collection of the same type, so utterances carry no information
/// about the slate.
pub fn random_description_utterances(
    turns: &[SlateTurn],
    corpus: &Corpus,
    bank: &TemplateBank,
    rng: &mut Rng,
) -> Result<Vec<String>, UttGenError> {
    turns
        .iter()
        .map(|turn| {
            let (ptype, ctype, _) = turn_key(turn, corpus)?;
            let pool: Vec<_> = corpus.collections_of_type(ctype).collect();
            let other = pool
                .choose(rng)
                .expect("the source collection has this type");
            bank.render_random(ptype, ctype, other.display_description(), rng)
        })
        .collect()
}
