use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedder::{item_text, words};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Inverted index over item text.
///
/// Scores are `Σ_{q in query} idf(q) · tf·(k1+1) / (tf + k1·(1 - b + b·|d|/avgdl))`
/// with repeated query terms counted each time and
/// `idf(q) = max(0, ln((N - df + 0.5) / (df + 0.5)))`.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    doc_len: Vec<usize>,
    avg_len: f64,
    postings: HashMap<String, Vec<(usize, usize)>>,
    params: Bm25Params,
}

impl Bm25Index {
    /// Documents are `(id, text)` pairs.
    pub fn build<'a>(
        docs: impl IntoIterator<Item = (String, &'a str)>,
        params: Bm25Params,
    ) -> Self {
        let mut ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let mut tf: HashMap<String, usize> = HashMap::new();
            let mut len = 0;
            for w in words(text) {
                *tf.entry(w).or_default() += 1;
                len += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc, count));
            }
            ids.push(id);
            doc_len.push(len);
        }
        let avg_len = if ids.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / ids.len() as f64
        };
        for list in postings.values_mut() {
            list.sort_unstable();
        }
        Self {
            ids,
            doc_len,
            avg_len,
            postings,
            params,
        }
    }

    /// Index over [`item_text`] of every corpus item.
    pub fn from_corpus(corpus: &Corpus, params: Bm25Params) -> Self {
        let texts: Vec<(String, String)> = corpus
            .items()
            .map(|i| (i.id.clone(), item_text(i)))
            .collect();
        Self::build(texts.iter().map(|(id, t)| (id.clone(), t.as_str())), params)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// Score of every document, in index order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0; self.ids.len()];
        for term in words(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                let tf = tf as f64;
                let norm = k1 * (1.0 - b + b * self.doc_len[doc] as f64 / self.avg_len);
                scores[doc] += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    /// Top-`k` document ids by descending score, ties by ascending id.
    pub fn rank(&self, query: &str, k: usize) -> Vec<String> {
        self.rank_where(query, k, |_| true)
    }

    pub fn rank_where(&self, query: &str, k: usize, keep: impl Fn(&str) -> bool) -> Vec<String> {
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..self.ids.len())
            .filter(|&d| keep(&self.ids[d]))
            .collect();
        let cmp = |a: &usize, b: &usize| {
            scores[*b]
                .total_cmp(&scores[*a])
                .then_with(|| self.ids[*a].cmp(&self.ids[*b]))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        order.into_iter().map(|d| self.ids[d].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(docs: &[&str]) -> Bm25Index {
        Bm25Index::build(
            docs.iter().enumerate().map(|(i, t)| (format!("d{i}"), *t)),
            Bm25Params::default(),
        )
    }

    #[test]
    fn single_document() {
        let idx = index(&["velvet harbor"]);
        assert_eq!(idx.rank("harbor", 5), vec!["d0"]);
    }

    #[test]
    fn absent_terms_contribute_nothing() {
        let idx = index(&["a b", "b c", "c d"]);
        assert_eq!(idx.scores("a zzz"), idx.scores("a"));
        assert_eq!(idx.scores("zzz"), vec![0.0; 3]);
    }

    #[test]
    fn ties_break_by_id() {
        let idx = index(&["x", "x", "y"]);
        assert_eq!(idx.rank("x", 3), vec!["d0", "d1", "d2"]);
    }
}
