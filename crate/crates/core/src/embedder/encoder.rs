use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fnv::FnvHashMap;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmbedError, TokenSequence};
use crate::rng::{self, Rng};

const PARAMS_MAGIC: &[u8; 4] = b"CCEP";
const PARAMS_VERSION: u32 = 1;

/// Token embedding table shared by the query and item towers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab: usize,
    dim: usize,
    table: Vec<f64>,
}

/// Output of [`EncoderParams::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub vector: Vec<f64>,
    /// The pooled vector was zero (or the input empty) and `vector` is the
    /// fallback basis vector e1.
    pub degenerate: bool,
}

impl EncoderParams {
    /// Rows drawn i.i.d. from N(0, 1/d), so rows have roughly unit norm.
    pub fn random(vocab: usize, dim: usize, seed: u64) -> Result<Self, EmbedError> {
        check_shape(vocab, dim)?;
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut rng = rng::seeded(seed);
        let table = (0..vocab * dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self { vocab, dim, table })
    }

    pub fn from_table(vocab: usize, dim: usize, table: Vec<f64>) -> Result<Self, EmbedError> {
        check_shape(vocab, dim)?;
        if table.len() != vocab * dim {
            return Err(EmbedError::Shape(format!(
                "table has {} entries, expected {vocab}x{dim}",
                table.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self { vocab, dim, table })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, token: u32) -> &[f64] {
        let start = token as usize * self.dim;
        &self.table[start..start + self.dim]
    }

    pub fn row_mut(&mut self, token: u32) -> &mut [f64] {
        let start = token as usize * self.dim;
        &mut self.table[start..start + self.dim]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    fn pool(&self, seq: &TokenSequence) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for &tok in seq.ids() {
            for (s, v) in sum.iter_mut().zip(self.row(tok)) {
                *s += v;
            }
        }
        let n = seq.len().max(1) as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        sum
    }

    /// Mean of the token rows, L2-normalized.
    pub fn encode(&self, seq: &TokenSequence) -> Encoded {
        let pooled = self.pool(seq);
        let (vector, _, degenerate) = normalize_or_fallback(pooled);
        Encoded { vector, degenerate }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), EmbedError> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_u32::<LittleEndian>(PARAMS_VERSION)?;
        w.write_u64::<LittleEndian>(self.vocab as u64)?;
        w.write_u64::<LittleEndian>(self.dim as u64)?;
        for v in &self.table {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAMS_MAGIC {
            return Err(EmbedError::Format("not an encoder parameter file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != PARAMS_VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let vocab = r.read_u64::<LittleEndian>()? as usize;
        let dim = r.read_u64::<LittleEndian>()? as usize;
        check_shape(vocab, dim)?;
        let mut table = vec![0.0; vocab * dim];
        r.read_f64_into::<LittleEndian>(&mut table)?;
        Self::from_table(vocab, dim, table)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), EmbedError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EmbedError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn check_shape(vocab: usize, dim: usize) -> Result<(), EmbedError> {
    if dim < 2 {
        return Err(EmbedError::Shape(format!(
            "dimension must be >= 2, got {dim}"
        )));
    }
    if vocab < 2 {
        return Err(EmbedError::Shape(format!(
            "vocabulary must be >= 2, got {vocab}"
        )));
    }
    Ok(())
}

/// Returns (unit vector, pre-normalization norm, degenerate flag).
fn normalize_or_fallback(mut v: Vec<f64>) -> (Vec<f64>, f64, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
        (v, norm, false)
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
        (v, norm, true)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient rows for the tokens touched by a batch.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    pub rows: FnvHashMap<u32, Vec<f64>>,
}

impl SparseGrad {
    fn add(&mut self, token: u32, dim: usize, scale: f64, g: &[f64]) {
        let row = self.rows.entry(token).or_insert_with(|| vec![0.0; dim]);
        for (r, v) in row.iter_mut().zip(g) {
            *r += scale * v;
        }
    }
}

struct Tower {
    vector: Vec<f64>,
    norm: f64,
    degenerate: bool,
}

fn forward(params: &EncoderParams, seq: &TokenSequence) -> Tower {
    let (vector, norm, degenerate) = normalize_or_fallback(params.pool(seq));
    Tower {
        vector,
        norm,
        degenerate: degenerate || seq.is_empty(),
    }
}

fn similarity_logits(queries: &[Tower], items: &[Tower], temperature: f64) -> Vec<Vec<f64>> {
    queries
        .iter()
        .map(|q| {
            items
                .iter()
                .map(|x| dot(&q.vector, &x.vector) / temperature)
                .collect()
        })
        .collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-batch contrastive (InfoNCE) loss: query i's positive is item i, every
/// other item in the batch is a negative.
pub fn contrastive_loss(
    params: &EncoderParams,
    queries: &[TokenSequence],
    items: &[TokenSequence],
    temperature: f64,
) -> f64 {
    assert_eq!(queries.len(), items.len(), "one positive per query");
    let q: Vec<Tower> = queries.iter().map(|s| forward(params, s)).collect();
    let x: Vec<Tower> = items.iter().map(|s| forward(params, s)).collect();
    let logits = similarity_logits(&q, &x, temperature);
    let b = logits.len() as f64;
    logits
        .iter()
        .enumerate()
        .map(|(i, row)| log_sum_exp(row) - row[i])
        .sum::<f64>()
        / b
}

/// Loss and its exact gradient with respect to the embedding table.
pub fn contrastive_loss_grad(
    params: &EncoderParams,
    queries: &[TokenSequence],
    items: &[TokenSequence],
    temperature: f64,
) -> (f64, SparseGrad) {
    assert_eq!(queries.len(), items.len(), "one positive per query");
    let dim = params.dim();
    let q: Vec<Tower> = queries.iter().map(|s| forward(params, s)).collect();
    let x: Vec<Tower> = items.iter().map(|s| forward(params, s)).collect();
    let logits = similarity_logits(&q, &x, temperature);
    let b = logits.len();

    // d loss / d similarity, per (query, item).
    let mut loss = 0.0;
    let mut d_sim = vec![vec![0.0; b]; b];
    for (i, row) in logits.iter().enumerate() {
        let lse = log_sum_exp(row);
        loss += lse - row[i];
        for j in 0..b {
            let p = (row[j] - lse).exp();
            let target = if i == j { 1.0 } else { 0.0 };
            d_sim[i][j] = (p - target) / (b as f64 * temperature);
        }
    }
    loss /= b as f64;

    let mut grad = SparseGrad::default();
    let mut g_unit = vec![0.0; dim];
    for i in 0..b {
        g_unit.iter_mut().for_each(|g| *g = 0.0);
        for j in 0..b {
            for (g, v) in g_unit.iter_mut().zip(&x[j].vector) {
                *g += d_sim[i][j] * v;
            }
        }
        backprop_tower(&q[i], &queries[i], &g_unit, dim, &mut grad);
    }
    for j in 0..b {
        g_unit.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..b {
            for (g, v) in g_unit.iter_mut().zip(&q[i].vector) {
                *g += d_sim[i][j] * v;
            }
        }
        backprop_tower(&x[j], &items[j], &g_unit, dim, &mut grad);
    }
    (loss, grad)
}

/// Pushes a gradient on the unit output back through normalization and mean
/// pooling. Degenerate towers have no gradient.
fn backprop_tower(
    tower: &Tower,
    seq: &TokenSequence,
    g_unit: &[f64],
    dim: usize,
    grad: &mut SparseGrad,
) {
    if tower.degenerate {
        return;
    }
    let proj = dot(&tower.vector, g_unit);
    let g_pooled: Vec<f64> = g_unit
        .iter()
        .zip(&tower.vector)
        .map(|(g, u)| (g - u * proj) / tower.norm)
        .collect();
    let scale = 1.0 / seq.len() as f64;
    for &tok in seq.ids() {
        grad.add(tok, dim, scale, &g_pooled);
    }
}

/// Plain SGD settings for contrastive training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SgdConfig {
    /// Small-machine defaults.
    pub fn desk() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            learning_rate: 0.05,
            temperature: 0.05,
            seed: 0,
        }
    }

    /// Batch size, learning rate and step count of the large-scale setup.
    /// Recorded for reference; impractical for the bag-of-embeddings model.
    pub fn large_scale() -> Self {
        Self {
            steps: 100_000,
            batch_size: 512,
            learning_rate: 1e-3,
            temperature: 0.05,
            seed: 0,
        }
    }
}

pub type Pair = (TokenSequence, TokenSequence);

/// Runs `config.steps` SGD steps. `sample` draws one batch of
/// (query, positive) pairs; `on_step` sees the parameters after every step
/// (1-based step number) and the batch loss.
pub fn train_contrastive<S, C>(
    params: &mut EncoderParams,
    config: &SgdConfig,
    mut sample: S,
    mut on_step: C,
) where
    S: FnMut(&mut Rng) -> Vec<Pair>,
    C: FnMut(usize, &EncoderParams, f64),
{
    let mut rng = rng::stream(config.seed, 1);
    for step in 1..=config.steps {
        let batch = sample(&mut rng);
        let (queries, items): (Vec<_>, Vec<_>) = batch.into_iter().unzip();
        let (loss, grad) = contrastive_loss_grad(params, &queries, &items, config.temperature);
        let mut tokens: Vec<_> = grad.rows.keys().copied().collect();
        tokens.sort_unstable();
        for tok in tokens {
            let g = &grad.rows[&tok];
            for (p, g) in params.row_mut(tok).iter_mut().zip(g) {
                *p -= config.learning_rate * g;
            }
        }
        on_step(step, params, loss);
    }
}
