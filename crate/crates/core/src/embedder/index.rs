use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::encoder::dot;
use super::EmbedError;

const INDEX_MAGIC: &[u8; 4] = b"CCIX";
const INDEX_VERSION: u32 = 1;

/// Allowed deviation of a stored row's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Item,
    Collection,
}

/// One ranked row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub id: &'a str,
    pub row: usize,
    pub score: f64,
}

/// Immutable store of unit vectors with exact cosine ranking.
///
/// Rankings sort by descending dot product, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
    kind: PayloadKind,
}

impl EmbeddingIndex {
    pub fn build(
        ids: Vec<String>,
        vectors: Vec<Vec<f64>>,
        kind: PayloadKind,
    ) -> Result<Self, EmbedError> {
        if ids.len() != vectors.len() {
            return Err(EmbedError::Shape(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut seen = HashSet::with_capacity(ids.len());
        let mut flat = Vec::with_capacity(ids.len() * dim);
        for (id, v) in ids.iter().zip(&vectors) {
            if !seen.insert(id.as_str()) {
                return Err(EmbedError::DuplicateId(id.clone()));
            }
            if v.len() != dim {
                return Err(EmbedError::Shape(format!(
                    "vector for `{id}` has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            let norm = dot(v, v).sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(EmbedError::NotUnit {
                    id: id.clone(),
                    norm,
                });
            }
            flat.extend_from_slice(v);
        }
        Ok(Self {
            ids,
            dim,
            vectors: flat,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> PayloadKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn score(&self, row: usize, q: &[f64]) -> f64 {
        dot(self.vector(row), q)
    }

    fn cmp_rows(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
    }

    /// Ranks `[lo, hi)` of the descending order over rows passing `keep`.
    pub fn rank_range_where(
        &self,
        q: &[f64],
        lo: usize,
        hi: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Vec<Neighbor<'_>> {
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&r| keep(r))
            .map(|r| (r, self.score(r, q)))
            .collect();
        let hi = hi.min(scored.len());
        if lo >= hi {
            return Vec::new();
        }
        if hi < scored.len() {
            scored.select_nth_unstable_by(hi, |a, b| self.cmp_rows(a, b));
            scored.truncate(hi);
        }
        scored.sort_unstable_by(|a, b| self.cmp_rows(a, b));
        scored[lo..]
            .iter()
            .map(|&(row, score)| Neighbor {
                id: &self.ids[row],
                row,
                score,
            })
            .collect()
    }

    /// Exact top-`k` by cosine similarity. `k` beyond the index size returns
    /// the full ranking.
    pub fn nearest(&self, q: &[f64], k: usize) -> Vec<Neighbor<'_>> {
        self.rank_range_where(q, 0, k, |_| true)
    }

    pub fn nearest_where(
        &self,
        q: &[f64],
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Vec<Neighbor<'_>> {
        self.rank_range_where(q, 0, k, keep)
    }

    /// Ranks `[lo, hi)` of the full ranking, clipped at the index size.
    pub fn neighbor_range(&self, q: &[f64], lo: usize, hi: usize) -> Vec<Neighbor<'_>> {
        self.rank_range_where(q, lo, hi, |_| true)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), EmbedError> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u8(match self.kind {
            PayloadKind::Item => 0,
            PayloadKind::Collection => 1,
        })?;
        w.write_u64::<LittleEndian>(self.ids.len() as u64)?;
        w.write_u64::<LittleEndian>(self.dim as u64)?;
        for id in &self.ids {
            w.write_u32::<LittleEndian>(id.len() as u32)?;
            w.write_all(id.as_bytes())?;
        }
        for v in &self.vectors {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(EmbedError::Format("not an embedding index file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != INDEX_VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let kind = match r.read_u8()? {
            0 => PayloadKind::Item,
            1 => PayloadKind::Collection,
            other => return Err(EmbedError::Format(format!("unknown payload kind {other}"))),
        };
        let n = r.read_u64::<LittleEndian>()? as usize;
        let dim = r.read_u64::<LittleEndian>()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            ids.push(
                String::from_utf8(buf).map_err(|_| EmbedError::Format("id is not UTF-8".into()))?,
            );
        }
        let mut flat = vec![0.0; n * dim];
        r.read_f64_into::<LittleEndian>(&mut flat)?;
        let vectors = flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        Self::build(ids, if n == 0 { Vec::new() } else { vectors }, kind)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), EmbedError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EmbedError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn orthogonal() -> EmbeddingIndex {
        EmbeddingIndex::build(
            vec!["a".into(), "b".into(), "c".into()],
            vec![basis(3, 0), basis(3, 1), basis(3, 2)],
            PayloadKind::Item,
        )
        .unwrap()
    }

    #[test]
    fn self_similarity_first() {
        let idx = orthogonal();
        let hits = idx.nearest(&basis(3, 1), 1);
        assert_eq!(hits[0].id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_scores_and_tie_break() {
        let idx = orthogonal();
        let hits = idx.nearest(&basis(3, 0), 3);
        let scores: Vec<f64> = hits.iter().map(|h| h.score).collect();
        assert_eq!(scores, vec![1.0, 0.0, 0.0]);
        // b and c tie at 0; ascending id.
        assert_eq!(hits[1].id, "b");
        assert_eq!(hits[2].id, "c");
    }

    #[test]
    fn k_beyond_size_returns_everything() {
        assert_eq!(orthogonal().nearest(&basis(3, 2), 10).len(), 3);
    }

    #[test]
    fn range_queries() {
        let idx = orthogonal();
        let q = basis(3, 2);
        assert_eq!(idx.neighbor_range(&q, 0, 2), idx.nearest(&q, 2));
        assert!(idx.neighbor_range(&q, 3, 10).is_empty());
        let tail = idx.neighbor_range(&q, 1, 100);
        assert_eq!(tail.len(), 2);
        assert_eq!(tail[0].id, "a");
    }

    #[test]
    fn build_errors() {
        let dup = EmbeddingIndex::build(
            vec!["a".into(), "a".into()],
            vec![basis(2, 0), basis(2, 1)],
            PayloadKind::Item,
        );
        assert!(matches!(dup, Err(EmbedError::DuplicateId(_))));
        let not_unit =
            EmbeddingIndex::build(vec!["a".into()], vec![vec![0.5, 0.5]], PayloadKind::Item);
        assert!(matches!(not_unit, Err(EmbedError::NotUnit { .. })));
    }

    #[test]
    fn persistence_round_trip() {
        let idx = orthogonal();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(EmbeddingIndex::read_from(buf.as_slice()).unwrap(), idx);
    }
}
