//! Skip-gram embeddings with negative sampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::symbols::{SymbolId, SymbolTable, TokenStream};

/// A vocabulary with one row vector per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: SymbolTable,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(vocab: SymbolTable, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != vocab.len() * dim {
            return Err(Error::DimensionMismatch(data.len(), vocab.len() * dim));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("embedding contains non-finite values".into()));
        }
        Ok(Self {
            vocab,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn vocab(&self) -> &SymbolTable {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vocab.get(token).map(|i| self.row(i as usize))
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Scales every row to unit length (zero rows stay zero).
    pub fn normalize(&mut self) {
        for row in self.data.chunks_mut(self.dim) {
            let n = row.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
            }
        }
        self.normalized = true;
    }

    /// Subtracts the mean row.
    pub fn center(&mut self) {
        let mut mean = vec![0.0f64; self.dim];
        for row in self.data.chunks(self.dim) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += *x as f64);
        }
        let n = self.len().max(1) as f64;
        for row in self.data.chunks_mut(self.dim) {
            row.iter_mut().zip(&mean).for_each(|(x, m)| *x = (*x as f64 - m / n) as f32);
        }
        self.normalized = false;
    }

    /// Unit length, mean-centered, unit length again.
    pub fn standardize(&mut self) {
        self.normalize();
        self.center();
        self.normalize();
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        cosine(self.row(a), self.row(b))
    }

    /// First `n` rows (rows are stored most frequent first after training).
    pub fn truncated(&self, n: usize) -> EmbeddingMatrix {
        let n = n.min(self.len());
        EmbeddingMatrix {
            vocab: self.vocab.strings()[..n].iter().map(String::as_str).collect(),
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
            normalized: self.normalized,
        }
    }

    /// `V d` header, then `token v1 … vd` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.len(), self.dim);
        for (i, tok) in self.vocab.strings().iter().enumerate() {
            out.push_str(tok);
            for x in self.row(i) {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("vector file"))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (v, d) = match (h.next(), h.next(), h.next()) {
            (Some(Ok(v)), Some(Ok(d)), None) if d > 0 => (v, d),
            _ => return Err(Error::parse("vector file", 1, "header must be `V d`")),
        };
        let mut vocab = SymbolTable::new();
        let mut data = Vec::with_capacity(v * d);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tok = fields.next().expect("non-empty line");
            let before = data.len();
            for f in fields {
                data.push(
                    f.parse::<f32>()
                        .map_err(|e| Error::parse("vector file", i + 1, e.to_string()))?,
                );
            }
            if data.len() - before != d {
                return Err(Error::parse("vector file", i + 1, format!("expected {d} values")));
            }
            if vocab.get(tok).is_some() {
                return Err(Error::parse("vector file", i + 1, format!("duplicate token {tok}")));
            }
            vocab.intern(tok);
        }
        if vocab.len() != v {
            return Err(Error::parse("vector file", 1, format!("header says {v} rows, found {}", vocab.len())));
        }
        let mut m = Self::new(vocab, d, data)?;
        // unit rows survive the text round trip, so keep them flagged
        m.normalized = m.len() > 0
            && m.data.chunks(d).all(|r| (r.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() - 1.0).abs() < 1e-5);
        Ok(m)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        ab += (*x as f64) * (*y as f64);
        aa += (*x as f64).powi(2);
        bb += (*y as f64).powi(2);
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub dim: usize,
    /// Maximum context distance; each center word samples an effective
    /// window in `1..=window`.
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    pub min_count: u64,
    pub learning_rate: f32,
    pub seed: u64,
    /// Single-threaded updates in corpus order. When off, lines are trained
    /// in parallel with unsynchronized (racy) updates to shared weights.
    pub deterministic: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negative: 5,
            epochs: 5,
            min_count: 5,
            learning_rate: 0.025,
            seed: 0,
            deterministic: true,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("embedding dimension must be at least 2".into()));
        }
        if self.window == 0 || self.negative == 0 || self.epochs == 0 || self.min_count == 0 {
            return Err(Error::Config("window, negatives, epochs and min count must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Trained vectors plus the mean loss of every epoch.
#[derive(Clone, Debug)]
pub struct Trained {
    pub matrix: EmbeddingMatrix,
    pub epoch_loss: Vec<f64>,
}

// Weights shared across threads; relaxed loads and stores of f32 bits.
struct Shared(Vec<AtomicU32>);

impl Shared {
    fn new(v: Vec<f32>) -> Self {
        Self(v.into_iter().map(|x| AtomicU32::new(x.to_bits())).collect())
    }

    #[inline]
    fn get(&self, i: usize) -> f32 {
        f32::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, i: usize, d: f32) {
        self.0[i].store((self.get(i) + d).to_bits(), Ordering::Relaxed);
    }

    fn into_vec(self) -> Vec<f32> {
        self.0.into_iter().map(|a| f32::from_bits(a.into_inner())).collect()
    }
}

struct Model<'a> {
    input: Shared,
    output: Shared,
    dim: usize,
    negatives: &'a WeightedIndex<f64>,
    cfg: &'a EmbedConfig,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Model<'_> {
    /// One pass over a line; returns (summed loss, number of pairs).
    fn train_line(&self, line: &[u32], rng: &mut ChaCha8Rng, lr: f32, grad: &mut [f32]) -> (f64, usize) {
        let d = self.dim;
        let mut loss = 0.0f64;
        let mut pairs = 0usize;
        for (pos, &center) in line.iter().enumerate() {
            let b = rng.random_range(1..=self.cfg.window);
            let lo = pos.saturating_sub(b);
            let hi = (pos + b).min(line.len() - 1);
            for (cpos, &ctx) in line.iter().enumerate().take(hi + 1).skip(lo) {
                if cpos == pos {
                    continue;
                }
                // ctx's input vector predicts center (as in the reference implementation)
                let row = ctx as usize * d;
                grad.iter_mut().for_each(|g| *g = 0.0);
                for k in 0..=self.cfg.negative {
                    let (target, label) = if k == 0 {
                        (center as usize, 1.0f32)
                    } else {
                        let t = self.negatives.sample(rng);
                        if t == center as usize {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out = target * d;
                    let mut f = 0.0f32;
                    for j in 0..d {
                        f += self.input.get(row + j) * self.output.get(out + j);
                    }
                    let s = sigmoid(f);
                    loss -= if label > 0.0 {
                        (s.max(1e-7) as f64).ln()
                    } else {
                        ((1.0 - s).max(1e-7) as f64).ln()
                    };
                    let g = (label - s) * lr;
                    for j in 0..d {
                        grad[j] += g * self.output.get(out + j);
                        self.output.add(out + j, g * self.input.get(row + j));
                    }
                }
                for (j, gj) in grad.iter().enumerate() {
                    self.input.add(row + j, *gj);
                }
                pairs += 1;
            }
        }
        (loss, pairs)
    }
}

/// Learns vectors for every token of `stream` seen at least `min_count`
/// times. Rows are ordered by descending frequency (ties by first
/// occurrence); rarer tokens are removed before windows are formed.
pub fn train_embeddings(stream: &TokenStream, vocab: &SymbolTable, cfg: &EmbedConfig) -> Result<EmbeddingMatrix> {
    Ok(train_embeddings_traced(stream, vocab, cfg)?.matrix)
}

pub fn train_embeddings_traced(stream: &TokenStream, vocab: &SymbolTable, cfg: &EmbedConfig) -> Result<Trained> {
    cfg.validate()?;
    stream.validate(vocab.len())?;
    if stream.len() < cfg.window + 1 {
        return Err(Error::CorpusTooShort {
            tokens: stream.len(),
            order: cfg.window + 1,
        });
    }
    let mut counts: HashMap<SymbolId, u64> = HashMap::new();
    let mut first: HashMap<SymbolId, usize> = HashMap::new();
    for (i, &id) in stream.ids().iter().enumerate() {
        *counts.entry(id).or_default() += 1;
        first.entry(id).or_insert(i);
    }
    let mut kept: Vec<(SymbolId, u64)> = counts.into_iter().filter(|&(_, c)| c >= cfg.min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(first[&a.0].cmp(&first[&b.0])));
    if kept.len() < 2 {
        return Err(Error::Empty("vocabulary after the min-count filter (need two tokens)"));
    }
    let remap: HashMap<SymbolId, u32> = kept.iter().enumerate().map(|(i, &(id, _))| (id, i as u32)).collect();
    let lines: Vec<Vec<u32>> = stream
        .lines()
        .map(|l| l.iter().filter_map(|id| remap.get(id).copied()).collect::<Vec<_>>())
        .filter(|l| l.len() > 1)
        .collect();
    if lines.is_empty() {
        return Err(Error::Empty("training lines with two or more kept tokens"));
    }
    let n = kept.len();
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init: Vec<f32> = (0..n * d).map(|_| (rng.random::<f32>() - 0.5) / d as f32).collect();
    let negatives = WeightedIndex::new(kept.iter().map(|&(_, c)| (c as f64).powf(0.75))).expect("positive counts");
    let model = Model {
        input: Shared::new(init),
        output: Shared::new(vec![0.0; n * d]),
        dim: d,
        negatives: &negatives,
        cfg,
    };
    let total_tokens: usize = lines.iter().map(Vec::len).sum();
    let total_work = (total_tokens * cfg.epochs) as f64;
    let min_lr = cfg.learning_rate * 1e-4;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let done_before = (epoch * total_tokens) as f64;
        let (loss, pairs) = if cfg.deterministic {
            let mut erng = ChaCha8Rng::seed_from_u64(cfg.seed);
            erng.set_stream(epoch as u64 + 1);
            let mut grad = vec![0.0f32; d];
            let mut done = 0usize;
            let mut acc = (0.0, 0usize);
            for line in &lines {
                let lr = (cfg.learning_rate * (1.0 - ((done_before + done as f64) / total_work) as f32)).max(min_lr);
                let (l, p) = model.train_line(line, &mut erng, lr, &mut grad);
                acc.0 += l;
                acc.1 += p;
                done += line.len();
            }
            acc
        } else {
            lines
                .par_iter()
                .enumerate()
                .map(|(i, line)| {
                    let mut lrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((epoch as u64 + 1) << 40));
                    lrng.set_stream(i as u64);
                    let frac = (done_before + (i * total_tokens / lines.len()) as f64) / total_work;
                    let lr = (cfg.learning_rate * (1.0 - frac as f32)).max(min_lr);
                    let mut grad = vec![0.0f32; d];
                    model.train_line(line, &mut lrng, lr, &mut grad)
                })
                .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
        };
        epoch_loss.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
        log::debug!("embedding epoch {epoch}: mean loss {}", epoch_loss[epoch]);
    }
    let table: SymbolTable = kept.iter().map(|&(id, _)| vocab.resolve(id)).collect();
    Ok(Trained {
        matrix: EmbeddingMatrix::new(table, d, model.input.into_vec())?,
        epoch_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::Domain;

    fn corpus(lines: &[String]) -> (TokenStream, SymbolTable) {
        let mut t = SymbolTable::new();
        let s = TokenStream::from_text(Domain::Word, lines.iter().map(String::as_str), &mut t);
        (s, t)
    }

    fn random_lines(seed: u64, n: usize, vocab: usize) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..10)
                    .map(|_| format!("w{}", rng.random_range(0..vocab)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    fn small_cfg() -> EmbedConfig {
        EmbedConfig {
            dim: 20,
            min_count: 1,
            epochs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_mode_is_bit_identical() {
        let (s, t) = corpus(&random_lines(1, 200, 30));
        let a = train_embeddings(&s, &t, &small_cfg()).unwrap();
        let b = train_embeddings(&s, &t, &small_cfg()).unwrap();
        assert_eq!(a.data(), b.data());
        let c = train_embeddings(&s, &t, &EmbedConfig { seed: 9, ..small_cfg() }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn width_and_vocabulary_follow_config() {
        let mut lines = random_lines(2, 100, 20);
        lines.push("rare w1 w2".into());
        let (s, t) = corpus(&lines);
        let m = train_embeddings(&s, &t, &EmbedConfig { dim: 50, min_count: 2, epochs: 1, ..Default::default() }).unwrap();
        assert_eq!(m.dim(), 50);
        assert_eq!(m.len(), 20);
        assert!(m.get("rare").is_none());
        assert!(m.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn tokens_sharing_neighbors_are_unusually_similar() {
        // filler words come in 20 topics of 4; x and y only ever occur
        // between the same two neighbors, inserted into lines of every topic
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lines: Vec<String> = (0..2000)
            .map(|_| {
                let topic = rng.random_range(0..20);
                let mut toks: Vec<String> = (0..8).map(|_| format!("w{}", topic * 4 + rng.random_range(0..4))).collect();
                let at = rng.random_range(0..8);
                toks.insert(at, if rng.random_bool(0.5) { "p x q" } else { "p y q" }.into());
                toks.join(" ")
            })
            .collect();
        let (s, t) = corpus(&lines);
        let m = train_embeddings(&s, &t, &EmbedConfig { dim: 30, min_count: 1, epochs: 5, window: 2, ..Default::default() }).unwrap();
        let x = m.vocab().get("x").unwrap() as usize;
        let y = m.vocab().get("y").unwrap() as usize;
        let target = m.cosine(x, y);
        let mut sims = Vec::new();
        for i in 0..m.len() {
            for j in (i + 1)..m.len() {
                if (i, j) != (x.min(y), x.max(y)) {
                    sims.push(m.cosine(i, j));
                }
            }
        }
        sims.sort_by(f64::total_cmp);
        let p95 = sims[sims.len() * 95 / 100];
        assert!(target > p95, "{target} vs {p95}");
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let (s, t) = corpus(&random_lines(4, 300, 25));
        let tr = train_embeddings_traced(&s, &t, &EmbedConfig { epochs: 6, ..small_cfg() }).unwrap();
        let first: f64 = tr.epoch_loss[..3].iter().sum();
        let last: f64 = tr.epoch_loss[3..].iter().sum();
        assert!(last < first, "{:?}", tr.epoch_loss);
    }

    #[test]
    fn normalization_is_idempotent() {
        let (s, t) = corpus(&random_lines(5, 50, 10));
        let mut m = train_embeddings(&s, &t, &small_cfg()).unwrap();
        m.normalize();
        let once = m.clone();
        m.normalize();
        for (a, b) in once.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        for i in 0..m.len() {
            let n: f64 = m.row(i).iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn text_round_trip() {
        let (s, t) = corpus(&random_lines(6, 30, 8));
        let m = train_embeddings(&s, &t, &small_cfg()).unwrap();
        let back = EmbeddingMatrix::from_text(&m.to_text()).unwrap();
        assert_eq!(back.vocab().strings(), m.vocab().strings());
        assert_eq!(back.data(), m.data());
        assert!(EmbeddingMatrix::from_text("2 3\na 1 2 3\n").is_err());
        assert!(EmbeddingMatrix::from_text("1 3\na 1 2\n").is_err());
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let (s, t) = corpus(&["a b".to_string()]);
        assert!(train_embeddings(&s, &t, &small_cfg()).is_err());
        let (s, t) = corpus(&random_lines(7, 20, 5));
        assert!(train_embeddings(&s, &t, &EmbedConfig { min_count: 1000, ..small_cfg() }).is_err());
        assert!(train_embeddings(&s, &t, &EmbedConfig { dim: 1, ..small_cfg() }).is_err());
    }

    #[test]
    fn parallel_mode_produces_finite_vectors() {
        let (s, t) = corpus(&random_lines(8, 100, 15));
        let m = train_embeddings(&s, &t, &EmbedConfig { deterministic: false, ..small_cfg() }).unwrap();
        assert_eq!(m.len(), 15);
        assert!(m.data().iter().all(|x| x.is_finite()));
    }
}
