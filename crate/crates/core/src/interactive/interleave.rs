use std::collections::{BTreeMap, HashSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::InteractiveError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Team {
    A,
    B,
}

/// A combined slate. `teams[i]` drafted `items[i]` from its own ranking at
/// 0-based position `source_ranks[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InterleavedSlate {
    pub items: Vec<String>,
    pub teams: Vec<Team>,
    pub source_ranks: Vec<usize>,
}

impl InterleavedSlate {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, team: Team) -> usize {
        self.teams.iter().filter(|t| **t == team).count()
    }
}

struct Cursor<'a> {
    ranking: &'a [String],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips items already taken and returns the next free one.
    fn peek(&mut self, taken: &HashSet<&str>) -> Option<usize> {
        while self.pos < self.ranking.len() && taken.contains(self.ranking[self.pos].as_str()) {
            self.pos += 1;
        }
        (self.pos < self.ranking.len()).then_some(self.pos)
    }
}

/// Team-draft interleaving. For every pair of picks a fair coin decides
/// which team drafts first; a team drafts its highest-ranked item not yet in
/// the slate. Drafting stops at `k` items or once either ranking has no new
/// item left.
pub fn team_draft_interleave(
    a: &[String],
    b: &[String],
    k: usize,
    rng: &mut Rng,
) -> InterleavedSlate {
    let mut out = InterleavedSlate::default();
    let mut taken: HashSet<&str> = HashSet::new();
    let mut cursors = [Cursor { ranking: a, pos: 0 }, Cursor { ranking: b, pos: 0 }];
    'draft: while out.len() < k {
        let order = if rng.random_bool(0.5) { [0, 1] } else { [1, 0] };
        for side in order {
            if out.len() >= k {
                break 'draft;
            }
            let (Some(_), Some(_)) = (cursors[0].peek(&taken), cursors[1].peek(&taken)) else {
                break 'draft;
            };
            let pos = cursors[side].peek(&taken).expect("checked");
            let item = cursors[side].ranking[pos].as_str();
            taken.insert(item);
            out.items.push(item.to_string());
            out.teams.push(if side == 0 { Team::A } else { Team::B });
            out.source_ranks.push(pos);
        }
    }
    out
}

/// Per-team hit indicators for one rated slate: a team scores 1 when any
/// item it drafted was liked.
pub fn credit(
    slate: &InterleavedSlate,
    ratings: &BTreeMap<String, bool>,
) -> Result<(u8, u8), InteractiveError> {
    let mut hits = (0, 0);
    for (item, team) in slate.items.iter().zip(&slate.teams) {
        let liked = *ratings
            .get(item)
            .ok_or_else(|| InteractiveError::IncompleteRatings(format!("`{item}` is unrated")))?;
        if liked {
            match team {
                Team::A => hits.0 = 1,
                Team::B => hits.1 = 1,
            }
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn list(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_inputs_reproduce_the_ranking() {
        let s = list(&["a", "b", "c", "d", "e"]);
        for seed in 0..20 {
            let out = team_draft_interleave(&s, &s, 5, &mut seeded(seed));
            assert_eq!(out.items, s);
            let (na, nb) = (out.count(Team::A), out.count(Team::B));
            assert!((na, nb) == (3, 2) || (na, nb) == (2, 3));
        }
    }

    #[test]
    fn disjoint_inputs_alternate() {
        let a = list(&["a1", "a2", "a3"]);
        let b = list(&["b1", "b2", "b3"]);
        let out = team_draft_interleave(&a, &b, 4, &mut seeded(1));
        assert_eq!(out.count(Team::A), 2);
        assert_eq!(out.count(Team::B), 2);
        for pair in out.teams.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert_eq!(out.source_ranks.iter().filter(|&&r| r == 0).count(), 2);
    }

    #[test]
    fn empty_inputs() {
        assert!(team_draft_interleave(&[], &[], 10, &mut seeded(0)).is_empty());
        assert!(team_draft_interleave(&list(&["a"]), &list(&["a"]), 0, &mut seeded(0)).is_empty());
    }

    #[test]
    fn first_pick_is_fair() {
        let a = list(&["a1", "a2"]);
        let b = list(&["b1", "b2"]);
        let mut rng = seeded(7);
        let n = 10_000;
        let a_first = (0..n)
            .filter(|_| team_draft_interleave(&a, &b, 2, &mut rng).teams[0] == Team::A)
            .count();
        let frac = a_first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn credit_cases() {
        let slate = InterleavedSlate {
            items: list(&["x", "y"]),
            teams: vec![Team::A, Team::B],
            source_ranks: vec![0, 0],
        };
        let r = |x: bool, y: bool| BTreeMap::from([("x".to_string(), x), ("y".to_string(), y)]);
        assert_eq!(credit(&slate, &r(false, false)).unwrap(), (0, 0));
        assert_eq!(credit(&slate, &r(true, false)).unwrap(), (1, 0));
        assert_eq!(credit(&slate, &r(true, true)).unwrap(), (1, 1));
        let partial = BTreeMap::from([("x".to_string(), true)]);
        assert!(matches!(
            credit(&slate, &partial),
            Err(InteractiveError::IncompleteRatings(_))
        ));
    }
}
