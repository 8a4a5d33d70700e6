use std::collections::{BTreeMap, BTreeSet};

use super::EvalError;

/// 1 if any of the first `k` ranked items is in `target`.
pub fn hits_at_k(ranked: &[String], target: &BTreeSet<String>, k: usize) -> Result<u8, EvalError> {
    if k == 0 {
        return Err(EvalError::Argument("k must be >= 1".into()));
    }
    if target.is_empty() {
        return Err(EvalError::EmptyTarget);
    }
    Ok(ranked.iter().take(k).any(|id| target.contains(id)) as u8)
}

/// Mean over conversations of the mean over each conversation's turns.
pub fn macro_hits<T: AsRef<[f64]>>(per_conversation: &[T]) -> Result<f64, EvalError> {
    if per_conversation.is_empty() {
        return Err(EvalError::Argument("no conversations to average".into()));
    }
    let mut total = 0.0;
    for turns in per_conversation {
        let turns = turns.as_ref();
        if turns.is_empty() {
            return Err(EvalError::Argument(
                "conversation without scored turns".into(),
            ));
        }
        total += turns.iter().sum::<f64>() / turns.len() as f64;
    }
    Ok(total / per_conversation.len() as f64)
}

/// [`macro_hits`] over `(conversation id, hit)` pairs in any order.
pub fn macro_hits_grouped<'a, H: Into<f64>>(
    hits: impl IntoIterator<Item = (&'a str, H)>,
) -> Result<f64, EvalError> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (id, h) in hits {
        groups.entry(id).or_default().push(h.into());
    }
    macro_hits(&groups.into_values().collect::<Vec<_>>())
}

/// Probability that a uniformly random ranking of `n` items puts at least
/// one of `targets` items in its top `k`: `1 - C(n - t, k) / C(n, k)`.
pub fn random_hit_probability(n: usize, targets: usize, k: usize) -> f64 {
    if targets == 0 {
        return 0.0;
    }
    if k + targets > n {
        return 1.0;
    }
    // C(n - t, k) / C(n, k) = prod_{i=0}^{t-1} (n - k - i) / (n - i)
    let miss: f64 = (0..targets)
        .map(|i| (n - k - i) as f64 / (n - i) as f64)
        .product();
    1.0 - miss
}
