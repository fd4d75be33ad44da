//! Unsupervised orthogonal alignment of two embedding spaces and
//! constrained nearest-neighbor extraction of word pronunciations.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::combine::ConfidentPairs;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::phonology::split_onset_rime;

/// Row-major dense matrix used for similarity work.
#[derive(Clone, Debug, PartialEq)]
pub struct Rows {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Rows {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * d);
        Self { n, d, data }
    }

    pub fn from_embedding(m: &EmbeddingMatrix) -> Self {
        Self::new(m.len(), m.dim(), m.data().iter().map(|&x| x as f64).collect())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn head(&self, n: usize) -> Rows {
        let n = n.min(self.n);
        Rows::new(n, self.d, self.data[..n * self.d].to_vec())
    }

    /// `self · w` for a d×d matrix.
    pub fn mul(&self, w: &DMatrix<f64>) -> Rows {
        let d = self.d;
        let mut out = vec![0.0; self.n * d];
        out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
            let r = self.row(i);
            for (k, &x) in r.iter().enumerate() {
                if x != 0.0 {
                    for (j, oj) in o.iter_mut().enumerate() {
                        *oj += x * w[(k, j)];
                    }
                }
            }
        });
        Rows::new(self.n, d, out)
    }

    fn normalize_rows(&mut self) {
        for r in self.data.chunks_mut(self.d) {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                r.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    fn center_columns(&mut self) {
        let mut mean = vec![0.0; self.d];
        for r in self.data.chunks(self.d) {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= self.n.max(1) as f64);
        for r in self.data.chunks_mut(self.d) {
            r.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
        }
    }
}

/// `a · bᵀ`, row-major `a.n × b.n`.
pub fn similarities(a: &Rows, b: &Rows) -> Vec<f64> {
    if a.n == 0 || b.n == 0 {
        return Vec::new();
    }
    // column-major (b · aᵀ) has the row-major layout of a · bᵀ
    let am = DMatrix::from_column_slice(a.d, a.n, &a.data);
    let bm = DMatrix::from_column_slice(b.d, b.n, &b.data);
    (bm.transpose() * am).data.into()
}

fn top_k_mean(row: &[f64], k: usize, scratch: &mut Vec<f64>) -> f64 {
    let k = k.min(row.len()).max(1);
    scratch.clear();
    scratch.extend_from_slice(row);
    scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    scratch[..k].iter().sum::<f64>() / k as f64
}

/// Mean similarity of every row of `sim` (`rows × cols`) to its `k` nearest
/// columns.
fn knn_rows(sim: &[f64], cols: usize, k: usize) -> Vec<f64> {
    sim.par_chunks(cols.max(1))
        .map_init(Vec::new, |s, row| top_k_mean(row, k, s))
        .collect()
}

fn transpose(sim: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; sim.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = sim[i * cols + j];
        }
    }
    t
}

/// CSLS penalties for two sets: `r_a[i]` is the mean cosine of `a_i` to its
/// `k` nearest rows of `b`, and vice versa.
pub struct CslsIndex {
    pub sim: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub r_rows: Vec<f64>,
    pub r_cols: Vec<f64>,
}

impl CslsIndex {
    pub fn new(queries: &Rows, candidates: &Rows, k: usize) -> Self {
        let sim = similarities(queries, candidates);
        let r_rows = knn_rows(&sim, candidates.n, k);
        let r_cols = knn_rows(&transpose(&sim, queries.n, candidates.n), queries.n, k);
        Self {
            sim,
            rows: queries.n,
            cols: candidates.n,
            r_rows,
            r_cols,
        }
    }

    #[inline]
    pub fn score(&self, i: usize, j: usize) -> f64 {
        2.0 * self.sim[i * self.cols + j] - self.r_rows[i] - self.r_cols[j]
    }

    /// Candidates for query `i` by descending score, ties to the lower id.
    pub fn ranked(&self, i: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.cols).collect();
        ids.sort_by(|&a, &b| self.score(i, b).total_cmp(&self.score(i, a)).then(a.cmp(&b)));
        ids
    }

    /// Best candidate per query.
    pub fn nearest(&self) -> Vec<usize> {
        (0..self.rows)
            .into_par_iter()
            .map(|i| {
                let mut best = 0;
                for j in 1..self.cols {
                    if self.score(i, j) > self.score(i, best) {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Ranks `candidates` for one query by CSLS; the candidates' penalties are
/// measured against `queries` (the query's own space).
pub fn csls_nn(query: &[f32], queries: &EmbeddingMatrix, candidates: &EmbeddingMatrix, k: usize) -> Result<Vec<usize>> {
    if query.len() != candidates.dim() || queries.dim() != candidates.dim() {
        return Err(Error::DimensionMismatch(query.len(), candidates.dim()));
    }
    if k == 0 {
        return Err(Error::Config("CSLS neighborhood must be at least 1".into()));
    }
    let q = Rows::new(1, query.len(), query.iter().map(|&x| x as f64).collect());
    let c = Rows::from_embedding(candidates);
    let qs = Rows::from_embedding(queries);
    let sim = similarities(&q, &c);
    let mut s = Vec::new();
    let r_q = top_k_mean(&sim, k, &mut s);
    let r_c = knn_rows(&transpose(&similarities(&qs, &c), qs.n, c.n), qs.n, k);
    let score = |j: usize| 2.0 * sim[j] - r_q - r_c[j];
    let mut ids: Vec<usize> = (0..c.n).collect();
    ids.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    Ok(ids)
}

/// A d×d linear map taking source-space rows into the target space
/// (`x ↦ x·W`).
#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix {
    pub w: DMatrix<f64>,
    pub source: String,
    pub target: String,
}

impl MappingMatrix {
    pub fn identity(d: usize) -> Self {
        Self {
            w: DMatrix::identity(d, d),
            source: "source".into(),
            target: "target".into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// max |WᵀW − I|.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.w.transpose() * &self.w;
        let d = self.dim();
        let mut e: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let t = if i == j { 1.0 } else { 0.0 };
                e = e.max((g[(i, j)] - t).abs());
            }
        }
        e
    }

    pub fn apply(&self, x: &Rows) -> Rows {
        x.mul(&self.w)
    }

    /// Orthogonal Procrustes: the W minimizing ‖X[src]·W − Z[trg]‖.
    pub fn procrustes(x: &Rows, z: &Rows, pairs: &[(usize, usize)]) -> Self {
        let d = x.d;
        let mut m = DMatrix::<f64>::zeros(d, d);
        for &(i, j) in pairs {
            let (xi, zj) = (x.row(i), z.row(j));
            for a in 0..d {
                if xi[a] != 0.0 {
                    for b in 0..d {
                        m[(a, b)] += xi[a] * zj[b];
                    }
                }
            }
        }
        let svd = m.svd(true, true);
        let w = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
        Self {
            w,
            source: "source".into(),
            target: "target".into(),
        }
    }

    /// `#mapping source target d`, then d rows of d values.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = format!("#mapping\t{}\t{}\t{d}\n", self.source, self.target);
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| format!("{:e}", self.w[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Empty("mapping file"))?;
        let f: Vec<&str> = header.split('\t').collect();
        if f.len() != 4 || f[0] != "#mapping" {
            return Err(Error::parse("mapping file", 1, "expected `#mapping<TAB>source<TAB>target<TAB>d`"));
        }
        let d: usize = f[3].parse().map_err(|_| Error::parse("mapping file", 1, "bad dimension"))?;
        let mut data = Vec::with_capacity(d * d);
        for (i, l) in lines.enumerate().take(d) {
            for v in l.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|e| Error::parse("mapping file", i + 2, e.to_string()))?);
            }
        }
        if data.len() != d * d {
            return Err(Error::parse("mapping file", 1, format!("expected {} values", d * d)));
        }
        Ok(Self {
            w: DMatrix::from_row_slice(d, d, &data),
            source: f[1].into(),
            target: f[2].into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VecmapConfig {
    pub csls_k: usize,
    /// Rows (most frequent first) that take part in dictionary induction.
    pub vocab_cutoff: usize,
    /// Rows used for the similarity-distribution seed dictionary.
    pub init_cutoff: usize,
    /// Initial keep probability of similarity entries in stochastic induction.
    pub keep_initial: f64,
    pub keep_multiplier: f64,
    /// Iterations without objective improvement before the keep
    /// probability grows.
    pub patience: usize,
    pub threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for VecmapConfig {
    fn default() -> Self {
        Self {
            csls_k: 10,
            vocab_cutoff: 20_000,
            init_cutoff: 4_000,
            keep_initial: 0.1,
            keep_multiplier: 2.0,
            patience: 50,
            threshold: 1e-6,
            max_iterations: 2_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MapResult {
    pub mapping: MappingMatrix,
    /// Induced (source row, target row) pairs of the final iteration.
    pub dictionary: Vec<(usize, usize)>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Sorted square-root similarity profiles, one per row: X(XᵀX)^{-1/2}Xᵀ
/// with each row sorted, then normalized, centered and normalized again.
fn similarity_signatures(x: &Rows) -> Rows {
    let d = x.d;
    let mut g = DMatrix::<f64>::zeros(d, d);
    for i in 0..x.n {
        let r = x.row(i);
        for a in 0..d {
            for b in 0..d {
                g[(a, b)] += r[a] * r[b];
            }
        }
    }
    let eig = SymmetricEigen::new(g);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut inv_sqrt = DMatrix::<f64>::zeros(d, d);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > lmax * 1e-12 && l > 0.0 {
            let v = eig.eigenvectors.column(k);
            inv_sqrt += (v * v.transpose()) / l.sqrt();
        }
    }
    let xp = x.mul(&inv_sqrt);
    let mut sim = similarities(&xp, x);
    sim.par_chunks_mut(x.n.max(1)).for_each(|r| r.sort_by(f64::total_cmp));
    let mut s = Rows::new(x.n, x.n, sim);
    s.normalize_rows();
    s.center_columns();
    s.normalize_rows();
    s
}

fn union_nn(sim: &[f64], rows: usize, cols: usize, k: usize, keep: f64, rng: &mut ChaCha8Rng) -> (Vec<(usize, usize)>, f64) {
    let knn_fwd = knn_rows(sim, cols, k);
    let simt = transpose(sim, rows, cols);
    let knn_bwd = knn_rows(&simt, rows, k);
    let mask = |rng: &mut ChaCha8Rng, n: usize| -> Vec<bool> {
        if keep >= 1.0 {
            vec![true; n]
        } else {
            (0..n).map(|_| rng.random_bool(keep)).collect()
        }
    };
    let mut pairs = Vec::with_capacity(rows + cols);
    let mut best_fwd = 0.0;
    let fwd_mask = mask(rng, rows * cols);
    for i in 0..rows {
        let row = &sim[i * cols..(i + 1) * cols];
        best_fwd += row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut arg = 0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..cols {
            // dropped entries count as zero similarity
            let s = if fwd_mask[i * cols + j] { row[j] - knn_bwd[j] / 2.0 } else { 0.0 };
            if s > best {
                best = s;
                arg = j;
            }
        }
        pairs.push((i, arg));
    }
    let mut best_bwd = 0.0;
    let bwd_mask = mask(rng, rows * cols);
    for j in 0..cols {
        let col = &simt[j * rows..(j + 1) * rows];
        best_bwd += col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut arg = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..rows {
            let s = if bwd_mask[j * rows + i] { col[i] - knn_fwd[i] / 2.0 } else { 0.0 };
            if s > best {
                best = s;
                arg = i;
            }
        }
        pairs.push((arg, j));
    }
    let objective = (best_fwd / rows as f64 + best_bwd / cols as f64) / 2.0;
    (pairs, objective)
}

/// Unsupervised seed dictionary: CSLS union nearest neighbours between the
/// similarity signatures of the `init_cutoff` most frequent rows.
pub fn seed_dictionary(x: &EmbeddingMatrix, z: &EmbeddingMatrix, cfg: &VecmapConfig) -> Vec<(usize, usize)> {
    seed_pairs(&Rows::from_embedding(x), &Rows::from_embedding(z), cfg)
}

fn seed_pairs(xr: &Rows, zr: &Rows, cfg: &VecmapConfig) -> Vec<(usize, usize)> {
    let n0 = xr.n.min(zr.n).min(cfg.init_cutoff);
    let xs = similarity_signatures(&xr.head(n0));
    let zs = similarity_signatures(&zr.head(n0));
    let sim0 = similarities(&xs, &zs);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    union_nn(&sim0, n0, n0, cfg.csls_k, 1.0, &mut rng).0
}

/// Self-learning alignment: a seed dictionary from similarity-distribution
/// matching, then alternating Procrustes solves and stochastic CSLS
/// dictionary induction until the keep probability reaches one and the
/// objective stops improving (or the dictionary reaches a fixpoint).
pub fn self_learn_map(x: &EmbeddingMatrix, z: &EmbeddingMatrix, cfg: &VecmapConfig) -> Result<MapResult> {
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch(x.dim(), z.dim()));
    }
    if !x.is_normalized() || !z.is_normalized() {
        return Err(Error::Config("self_learn_map needs length-normalized embeddings".into()));
    }
    if x.is_empty() || z.is_empty() {
        return Err(Error::Empty("embedding matrix"));
    }
    if cfg.csls_k == 0 || cfg.keep_initial <= 0.0 || cfg.keep_multiplier <= 1.0 {
        return Err(Error::Config("bad vecmap settings".into()));
    }
    let xr = Rows::from_embedding(x);
    let zr = Rows::from_embedding(z);
    let pairs = seed_pairs(&xr, &zr, cfg);
    refine(&xr, &zr, pairs, cfg)
}

/// Self-learning from a given seed dictionary of (source row, target row)
/// pairs instead of the unsupervised one.
pub fn self_learn_from(x: &EmbeddingMatrix, z: &EmbeddingMatrix, seed: &[(usize, usize)], cfg: &VecmapConfig) -> Result<MapResult> {
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch(x.dim(), z.dim()));
    }
    if seed.is_empty() || seed.iter().any(|&(i, j)| i >= x.len() || j >= z.len()) {
        return Err(Error::Config("seed dictionary empty or out of range".into()));
    }
    refine(&Rows::from_embedding(x), &Rows::from_embedding(z), seed.to_vec(), cfg)
}

fn refine(xr: &Rows, zr: &Rows, mut pairs: Vec<(usize, usize)>, cfg: &VecmapConfig) -> Result<MapResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let xc = xr.head(cfg.vocab_cutoff);
    let zc = zr.head(cfg.vocab_cutoff);
    let mut keep = cfg.keep_initial;
    let mut best_objective = f64::NEG_INFINITY;
    let mut best_mapping: Option<MappingMatrix> = None;
    let mut last_improvement = 0;
    let mut it = 0;
    let mut end = false;
    let mut converged = false;
    let mut objective = f64::NEG_INFINITY;
    let mut warnings = Vec::new();
    let mut mapping;
    loop {
        if it - last_improvement > cfg.patience {
            if keep >= 1.0 {
                end = true;
            }
            keep = (keep * cfg.keep_multiplier).min(1.0);
            last_improvement = it;
        }
        mapping = MappingMatrix::procrustes(xr, zr, &pairs);
        if end {
            converged = true;
            break;
        }
        if it >= cfg.max_iterations {
            let msg = format!("self-learning did not converge in {} iterations; returning the best iterate", cfg.max_iterations);
            log::warn!("{msg}");
            warnings.push(msg);
            if let Some(b) = best_mapping.take() {
                mapping = b;
            }
            break;
        }
        let xw = mapping.apply(&xc);
        let sim = similarities(&xw, &zc);
        let (next, obj) = union_nn(&sim, xc.n, zc.n, cfg.csls_k, keep, &mut rng);
        if obj - best_objective >= cfg.threshold {
            last_improvement = it;
            best_objective = obj;
            best_mapping = Some(mapping.clone());
        }
        objective = obj;
        let fixpoint = keep >= 1.0 && next == pairs;
        pairs = next;
        it += 1;
        log::debug!("vecmap iteration {it}: keep {keep:.3} objective {obj:.6}");
        if fixpoint {
            mapping = MappingMatrix::procrustes(xr, zr, &pairs);
            converged = true;
            break;
        }
    }
    mapping.source = "source".into();
    mapping.target = "target".into();
    Ok(MapResult {
        mapping,
        dictionary: pairs,
        objective,
        iterations: it,
        converged,
        warnings,
    })
}

/// Precision@1 of CSLS translation of the first `n` source rows against a
/// gold target index per row.
pub fn precision_at_1(x: &EmbeddingMatrix, z: &EmbeddingMatrix, w: &MappingMatrix, gold: &[usize], k: usize) -> f64 {
    let xw = w.apply(&Rows::from_embedding(x).head(gold.len()));
    let idx = CslsIndex::new(&xw, &Rows::from_embedding(z), k);
    let nn = idx.nearest();
    let ok = nn.iter().zip(gold).filter(|(a, b)| a == b).count();
    ok as f64 / gold.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordPron {
    pub word: String,
    pub syllables: Vec<String>,
    pub score: f64,
    /// No ranked candidate survived the filters.
    pub fallback: bool,
}

/// Written word → syllable sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordPronTable {
    entries: Vec<WordPron>,
    index: HashMap<String, usize>,
}

impl WordPronTable {
    pub fn insert(&mut self, e: WordPron) -> Result<()> {
        for s in &e.syllables {
            split_onset_rime(s)?;
        }
        match self.index.get(&e.word) {
            Some(&i) => self.entries[i] = e,
            None => {
                self.index.insert(e.word.clone(), self.entries.len());
                self.entries.push(e);
            }
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&WordPron> {
        self.index.get(word).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[WordPron] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `word<TAB>syl1 syl2 …<TAB>score`; fallback rows carry score `nan`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let score = if e.fallback { "nan".to_string() } else { format!("{:.6}", e.score) };
            let _ = writeln!(out, "{}\t{}\t{}", e.word, e.syllables.join(" "), score);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut t = WordPronTable::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse("word pronunciation table", i + 1, "expected 3 fields"));
            }
            let score: f64 = f[2]
                .parse()
                .map_err(|_| Error::parse("word pronunciation table", i + 1, "bad score"))?;
            t.insert(WordPron {
                word: f[0].into(),
                syllables: f[1].split_whitespace().map(String::from).collect(),
                score,
                fallback: score.is_nan(),
            })?;
        }
        Ok(t)
    }
}

/// Splits a spoken-word token (`zhong-yao`, or a bare syllable) into
/// syllables; `None` if any part is not a legal syllable.
pub fn spoken_syllables(token: &str) -> Option<Vec<String>> {
    let parts: Vec<String> = token.split(['-', ' ']).filter(|s| !s.is_empty()).map(String::from).collect();
    if parts.is_empty() || parts.iter().any(|p| split_onset_rime(p).is_err()) {
        None
    } else {
        Some(parts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapWordsConfig {
    pub csls_k: usize,
    /// Syllable used for unconstrained positions of fallback entries.
    pub fallback_syllable: String,
}

impl Default for MapWordsConfig {
    fn default() -> Self {
        Self {
            csls_k: 10,
            fallback_syllable: "de".into(),
        }
    }
}

fn fallback_for(word: &str, constraints: &ConfidentPairs, cfg: &MapWordsConfig) -> Vec<String> {
    word.chars()
        .map(|c| {
            constraints
                .get(c.encode_utf8(&mut [0; 4]))
                .map_or_else(|| cfg.fallback_syllable.clone(), str::to_owned)
        })
        .collect()
}

/// Picks, for every written word, the best CSLS-ranked spoken word whose
/// syllable count equals the word's character count and that agrees with
/// every constrained character. Words with no surviving candidate get the
/// per-character fallback: the constrained syllable where one exists,
/// otherwise `cfg.fallback_syllable`.
pub fn map_words(
    written: &EmbeddingMatrix,
    spoken: &EmbeddingMatrix,
    w: &MappingMatrix,
    constraints: &ConfidentPairs,
    cfg: &MapWordsConfig,
) -> Result<WordPronTable> {
    if written.dim() != spoken.dim() || w.dim() != written.dim() {
        return Err(Error::DimensionMismatch(written.dim(), spoken.dim()));
    }
    split_onset_rime(&cfg.fallback_syllable)?;
    let xw = w.apply(&Rows::from_embedding(written));
    let z = Rows::from_embedding(spoken);
    let idx = CslsIndex::new(&xw, &z, cfg.csls_k);
    let cands: Vec<Option<Vec<String>>> = spoken.vocab().strings().iter().map(|t| spoken_syllables(t)).collect();
    let words = written.vocab().strings();
    let picks: Vec<Option<(usize, f64)>> = (0..words.len())
        .into_par_iter()
        .map(|i| {
            let chars: Vec<String> = words[i].chars().map(String::from).collect();
            let fixed: Vec<Option<&str>> = chars.iter().map(|c| constraints.get(c)).collect();
            let mut best: Option<(usize, f64)> = None;
            for (j, cand) in cands.iter().enumerate() {
                let Some(syls) = cand else { continue };
                if syls.len() != chars.len() {
                    continue;
                }
                if fixed.iter().zip(syls).any(|(f, s)| f.is_some_and(|f| f != s)) {
                    continue;
                }
                let s = idx.score(i, j);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
            best
        })
        .collect();
    let mut table = WordPronTable::default();
    for (word, pick) in words.iter().zip(picks) {
        let entry = match pick {
            Some((j, score)) => WordPron {
                word: word.clone(),
                syllables: cands[j].clone().expect("filtered candidates parse"),
                score,
                fallback: false,
            },
            None => WordPron {
                word: word.clone(),
                syllables: fallback_for(word, constraints, cfg),
                score: f64::NAN,
                fallback: true,
            },
        };
        table.insert(entry)?;
    }
    Ok(table)
}

/// Splits each word's pronunciation positionally over its characters.
/// Words missing from the table use the per-character fallback.
pub fn project_to_characters(
    table: &WordPronTable,
    segmented: &[Vec<String>],
    constraints: &ConfidentPairs,
    cfg: &MapWordsConfig,
) -> Result<Vec<Vec<String>>> {
    segmented
        .iter()
        .map(|line| {
            let mut out = Vec::new();
            for word in line {
                let n = word.chars().count();
                let syls = match table.get(word) {
                    Some(e) => e.syllables.clone(),
                    None => fallback_for(word, constraints, cfg),
                };
                if syls.len() != n {
                    return Err(Error::LengthMismatch(syls.len(), n));
                }
                out.extend(syls);
            }
            Ok(out)
        })
        .collect()
}
