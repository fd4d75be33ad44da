//! Noisy-channel EM over character n-grams.
//!
//! The character corpus is reduced to its top-N n-grams with counts; each is
//! explained by the top-M syllable n-grams of a fixed prior, scored as
//! `Pr(p1 p2 p3) · Pr(c1|p1) Pr(c2|p2) Pr(c3|p3)`. Fractional counts of
//! `(c, p)` pairs are accumulated from the posteriors and renormalized into
//! the substitution table `Pr(c|p)` each iteration.
//!
//! The substitution model is either a single table ([`ChannelTable`]) or the
//! five-table mixture over character components ([`FactoredChannel`]).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lm::{train_lm, NgramPrior, Smoothing};
use crate::phonology::DecompositionTable;
use crate::symbols::{count_ngrams_par, top_k, NgramCounts, SymbolId, SymbolTable, TokenStream};

/// Dense substitution table `Pr(c | p)`, one row per syllable.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTable {
    chars: SymbolTable,
    syllables: SymbolTable,
    // row-major: probs[p * n_chars + c]
    probs: Vec<f64>,
}

impl ChannelTable {
    pub fn uniform(chars: SymbolTable, syllables: SymbolTable) -> Self {
        let nc = chars.len();
        let v = if nc == 0 { 0.0 } else { 1.0 / nc as f64 };
        let probs = vec![v; nc * syllables.len()];
        Self {
            chars,
            syllables,
            probs,
        }
    }

    /// Builds a table from raw row weights, normalizing each row. All-zero
    /// rows stay zero.
    pub fn from_weights(chars: SymbolTable, syllables: SymbolTable, mut weights: Vec<f64>) -> Result<Self> {
        let nc = chars.len();
        if weights.len() != nc * syllables.len() {
            return Err(Error::LengthMismatch(weights.len(), nc * syllables.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("channel weights must be finite and non-negative".into()));
        }
        for row in weights.chunks_mut(nc.max(1)) {
            normalize(row);
        }
        Ok(Self {
            chars,
            syllables,
            probs: weights,
        })
    }

    pub fn chars(&self) -> &SymbolTable {
        &self.chars
    }

    pub fn syllables(&self) -> &SymbolTable {
        &self.syllables
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn n_syllables(&self) -> usize {
        self.syllables.len()
    }

    pub fn prob(&self, c: SymbolId, p: SymbolId) -> f64 {
        self.probs[p as usize * self.n_chars() + c as usize]
    }

    pub fn row(&self, p: SymbolId) -> &[f64] {
        let nc = self.n_chars();
        &self.probs[p as usize * nc..(p as usize + 1) * nc]
    }

    /// `Pr(c | p)` for every syllable `p`.
    pub fn column(&self, c: SymbolId) -> Vec<f64> {
        (0..self.n_syllables() as SymbolId).map(|p| self.prob(c, p)).collect()
    }

    /// Character-major copy: `out[c * n_syllables + p]`.
    pub fn transposed(&self) -> Vec<f64> {
        let (nc, ns) = (self.n_chars(), self.n_syllables());
        let mut out = vec![0.0; nc * ns];
        for p in 0..ns {
            for c in 0..nc {
                out[c * ns + p] = self.probs[p * nc + c];
            }
        }
        out
    }

    /// True when some row gives `c` nonzero probability.
    pub fn has_support(&self, c: SymbolId) -> bool {
        (c as usize) < self.n_chars() && (0..self.n_syllables() as SymbolId).any(|p| self.prob(c, p) > 0.0)
    }

    /// Syllable maximizing `Pr(c | p)`, ties to the lower id.
    pub fn best_syllable(&self, c: SymbolId) -> Option<SymbolId> {
        let mut best: Option<(SymbolId, f64)> = None;
        for p in 0..self.n_syllables() as SymbolId {
            let v = self.prob(c, p);
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
        best.map(|(p, _)| p)
    }

    /// Largest deviation of any nonempty row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.probs
            .chunks(self.n_chars().max(1))
            .map(|r| r.iter().sum::<f64>())
            .filter(|&s| s > 0.0)
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// TSV: a `#channel` header followed by `p<TAB>c<TAB>prob` rows grouped
    /// by `p`; zero entries are omitted.
    pub fn to_tsv(&self, meta: &ChannelMeta) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#channel\tmode={}\tlambda={},{},{}\titerations={}\tloglik={}",
            meta.mode.as_str(),
            meta.lambdas[0],
            meta.lambdas[1],
            meta.lambdas[2],
            meta.iterations,
            meta.loglik
        );
        let _ = writeln!(out, "#chars\t{}", self.chars.strings().join(" "));
        let _ = writeln!(out, "#syllables\t{}", self.syllables.strings().join(" "));
        for p in 0..self.n_syllables() as SymbolId {
            let ps = self.syllables.resolve(p);
            for (c, &v) in self.row(p).iter().enumerate() {
                if v > 0.0 {
                    let _ = writeln!(out, "{ps}\t{}\t{v:e}", self.chars.resolve(c as SymbolId));
                }
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<(Self, ChannelMeta)> {
        let err = |line: usize, msg: &str| Error::parse("channel", line, msg);
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let meta = ChannelMeta::parse_header(header).ok_or_else(|| err(1, "bad #channel header"))?;
        let mut table_line = |tag: &str, n: usize| -> Result<SymbolTable> {
            let (_, l) = lines.next().ok_or_else(|| err(n, "truncated header"))?;
            Ok(l.strip_prefix(tag)
                .ok_or_else(|| err(n, "expected symbol list"))?
                .split_whitespace()
                .collect())
        };
        let chars = table_line("#chars\t", 2)?;
        let syllables = table_line("#syllables\t", 3)?;
        let mut table = ChannelTable {
            probs: vec![0.0; chars.len() * syllables.len()],
            chars,
            syllables,
        };
        let nc = table.n_chars();
        for (i, line) in lines {
            let mut f = line.split('\t');
            let (p, c, v) = match (f.next(), f.next(), f.next()) {
                (Some(p), Some(c), Some(v)) => (p, c, v),
                _ => return Err(err(i + 1, "expected p<TAB>c<TAB>prob")),
            };
            let p = table.syllables.get(p).ok_or_else(|| err(i + 1, "unknown syllable"))?;
            let c = table.chars.get(c).ok_or_else(|| err(i + 1, "unknown character"))?;
            let v: f64 = v.parse().map_err(|_| err(i + 1, "bad probability"))?;
            table.probs[p as usize * nc + c as usize] = v;
        }
        Ok((table, meta))
    }
}

fn normalize(row: &mut [f64]) -> bool {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        for v in row.iter_mut() {
            *v /= s;
        }
        true
    } else {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmMode {
    /// One substitution table over character trigrams.
    Flat,
    /// Five-table component mixture over character trigrams.
    Factored,
    /// One table over character pairs with a pruned pair prior.
    Pair,
}

impl EmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmMode::Flat => "flat",
            EmMode::Factored => "factored",
            EmMode::Pair => "pair",
        }
    }

    /// n-gram order the mode trains on.
    pub fn order(self) -> usize {
        match self {
            EmMode::Pair => 2,
            _ => 3,
        }
    }
}

impl std::str::FromStr for EmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(EmMode::Flat),
            "factored" => Ok(EmMode::Factored),
            "pair" => Ok(EmMode::Pair),
            _ => Err(Error::Config(format!("unknown EM mode {s:?} (flat | factored | pair)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Uniform,
    /// Uniform(0.5, 1.5) weights, row-normalized.
    Random,
}

/// Header metadata stored with a serialized channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelMeta {
    pub mode: EmMode,
    pub lambdas: [f64; 3],
    pub iterations: usize,
    pub loglik: f64,
}

impl ChannelMeta {
    fn parse_header(line: &str) -> Option<Self> {
        let mut fields = line.split('\t');
        if fields.next()? != "#channel" {
            return None;
        }
        let mut meta = ChannelMeta {
            mode: EmMode::Flat,
            lambdas: [1.0, 0.0, 0.0],
            iterations: 0,
            loglik: f64::NAN,
        };
        for f in fields {
            let (k, v) = f.split_once('=')?;
            match k {
                "mode" => meta.mode = v.parse().ok()?,
                "lambda" => {
                    let l: Vec<f64> = v.split(',').map(|x| x.parse().ok()).collect::<Option<_>>()?;
                    meta.lambdas = l.try_into().ok()?;
                }
                "iterations" => meta.iterations = v.parse().ok()?,
                "loglik" => meta.loglik = v.parse().ok()?,
                _ => return None,
            }
        }
        Some(meta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    /// Top-N character n-grams shown to EM.
    pub n: usize,
    /// Top-M syllable n-grams available to explain each character n-gram.
    pub m: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub mode: EmMode,
    pub init: Init,
    /// `(character, syllable)` id pairs whose initial weight is set to 1.0.
    pub hints: Vec<(SymbolId, SymbolId)>,
    /// Pair mode: syllable pairs seen fewer times are dropped from the prior.
    pub prune_threshold: u64,
    /// Factored mode mixture weights.
    pub lambdas: [f64; 3],
    /// Run the E-step on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            m: 100_000,
            iterations: 100,
            restarts: 10,
            seed: 0,
            mode: EmMode::Flat,
            init: Init::Random,
            hints: Vec::new(),
            prune_threshold: 5,
            lambdas: [0.8, 0.1, 0.1],
            parallel: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.iterations == 0 || self.restarts == 0 {
            return Err(Error::Config("N, M, iterations and restarts must all be at least 1".into()));
        }
        if self.lambdas.iter().any(|l| *l < 0.0) || (self.lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("lambdas must be non-negative and sum to 1".into()));
        }
        Ok(())
    }
}

/// Per-iteration `log Pr(C)`: entry 0 is the initial model, entry k the
/// model after k re-estimations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LikelihoodTrace {
    pub values: Vec<f64>,
}

impl LikelihoodTrace {
    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// First index `k` with `L_k < L_{k-1} - rel_tol * |L_{k-1}|`.
    pub fn first_decrease(&self, rel_tol: f64) -> Option<usize> {
        self.values
            .windows(2)
            .position(|w| w[1] < w[0] - rel_tol * w[0].abs())
            .map(|i| i + 1)
    }

    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.first_decrease(rel_tol).is_none()
    }
}

/// The training set: top-N character n-grams with counts and top-M
/// candidate syllable n-grams with prior probabilities.
#[derive(Clone, Debug)]
pub struct EmProblem {
    order: usize,
    chars: SymbolTable,
    syllables: SymbolTable,
    // flat: order ids per n-gram
    char_grams: Vec<SymbolId>,
    char_counts: Vec<f64>,
    cand_grams: Vec<SymbolId>,
    cand_prior: Vec<f64>,
}

impl EmProblem {
    /// Selects the top `n` character n-grams (by count) and takes the prior's
    /// entries as candidates.
    pub fn new(
        char_counts: &NgramCounts,
        chars: &SymbolTable,
        prior: &NgramPrior,
        syllables: &SymbolTable,
        n: usize,
    ) -> Result<Self> {
        let order = char_counts.order();
        if prior.order != order {
            return Err(Error::Config(format!(
                "character n-gram order {order} does not match prior order {}",
                prior.order
            )));
        }
        if char_counts.is_empty() || prior.is_empty() {
            return Err(Error::Empty("EM training n-grams"));
        }
        if chars.is_empty() || syllables.is_empty() {
            return Err(Error::Empty("EM vocabulary"));
        }
        let mut char_grams = Vec::new();
        let mut counts = Vec::new();
        for (g, c) in top_k(char_counts, n) {
            if g.iter().any(|&id| id as usize >= chars.len()) {
                return Err(Error::UnknownSymbol {
                    symbol: format!("{g:?}"),
                    table: "character vocabulary",
                });
            }
            char_grams.extend_from_slice(&g);
            counts.push(c as f64);
        }
        let mut cand_grams = Vec::new();
        let mut cand_prior = Vec::new();
        for (g, p) in &prior.entries {
            if g.iter().any(|&id| id as usize >= syllables.len()) {
                return Err(Error::UnknownSymbol {
                    symbol: format!("{g:?}"),
                    table: "syllable vocabulary",
                });
            }
            cand_grams.extend_from_slice(g);
            cand_prior.push(*p);
        }
        Ok(Self {
            order,
            chars: chars.clone(),
            syllables: syllables.clone(),
            char_grams,
            char_counts: counts,
            cand_grams,
            cand_prior,
        })
    }

    /// Counts both corpora at the order of `cfg.mode` and builds the
    /// problem: top `cfg.n` character n-grams against the top `cfg.m`
    /// syllable n-grams with prior `count / total`. Pair mode first drops
    /// syllable pairs seen fewer than `cfg.prune_threshold` times.
    pub fn from_streams(
        chars: &TokenStream,
        char_vocab: &SymbolTable,
        syllables: &TokenStream,
        syllable_vocab: &SymbolTable,
        cfg: &EmConfig,
    ) -> Result<Self> {
        let order = cfg.mode.order();
        let cc = count_ngrams_par(chars, order)?;
        let mut sc = count_ngrams_par(syllables, order)?;
        if cfg.mode == EmMode::Pair {
            sc = sc.pruned(cfg.prune_threshold);
        }
        let prior = train_lm(&sc, syllable_vocab, Smoothing::None)?.prior(cfg.m)?;
        Self::new(&cc, char_vocab, &prior, syllable_vocab, cfg.n)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn chars(&self) -> &SymbolTable {
        &self.chars
    }

    pub fn syllables(&self) -> &SymbolTable {
        &self.syllables
    }

    pub fn num_char_grams(&self) -> usize {
        self.char_counts.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.cand_prior.len()
    }

    pub fn char_gram(&self, i: usize) -> (&[SymbolId], f64) {
        (&self.char_grams[i * self.order..(i + 1) * self.order], self.char_counts[i])
    }

    pub fn candidate(&self, j: usize) -> (&[SymbolId], f64) {
        (&self.cand_grams[j * self.order..(j + 1) * self.order], self.cand_prior[j])
    }
}

/// Result of one E-step.
#[derive(Clone, Debug)]
pub struct Expectation {
    /// `Σ count · log Σ_p score`, over n-grams with a nonzero inner sum.
    pub loglik: f64,
    /// Expected `(c, p)` counts, character-major: `counts[c * n_syllables + p]`.
    pub counts: Vec<f64>,
    /// Indices of character n-grams whose candidate scores were all zero.
    pub zero_grams: Vec<usize>,
}

const BLOCK: usize = 256;

/// Sparse per-block accumulator: rows allocated on first touch.
struct BlockAcc {
    rows: Vec<(SymbolId, Vec<f64>)>,
    slot: std::collections::HashMap<SymbolId, usize>,
    loglik: f64,
    zero: Vec<usize>,
}

impl BlockAcc {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            slot: std::collections::HashMap::new(),
            loglik: 0.0,
            zero: Vec::new(),
        }
    }

    fn row(&mut self, c: SymbolId, ns: usize) -> &mut [f64] {
        let idx = *self.slot.entry(c).or_insert_with(|| {
            self.rows.push((c, vec![0.0; ns]));
            self.rows.len() - 1
        });
        &mut self.rows[idx].1
    }
}

/// One E-step of the flat model given the channel in character-major layout
/// (`cols[c * ns + p] = Pr(c | p)`).
fn estep_cols(problem: &EmProblem, cols: &[f64], ns: usize, parallel: bool) -> Expectation {
    let nc = problem.chars.len();
    let n_grams = problem.num_char_grams();
    let prior_max = problem.cand_prior.iter().copied().fold(0.0, f64::max);
    let prior_scaled: Vec<f64> = problem.cand_prior.iter().map(|p| p / prior_max).collect();
    let log_prior_max = prior_max.ln();

    let run_block = |b: usize| -> BlockAcc {
        let mut acc = BlockAcc::new();
        let mut scratch = vec![0.0; problem.order * ns];
        let mut marg = vec![0.0; problem.order * ns];
        let end = ((b + 1) * BLOCK).min(n_grams);
        for i in b * BLOCK..end {
            let (g, w) = problem.char_gram(i);
            let mut log_scale = log_prior_max;
            let mut dead = false;
            for (k, &c) in g.iter().enumerate() {
                let col = &cols[c as usize * ns..(c as usize + 1) * ns];
                let m = col.iter().copied().fold(0.0, f64::max);
                if m <= 0.0 {
                    dead = true;
                    break;
                }
                log_scale += m.ln();
                for (s, &v) in scratch[k * ns..(k + 1) * ns].iter_mut().zip(col) {
                    *s = v / m;
                }
            }
            if dead {
                acc.zero.push(i);
                continue;
            }
            marg.iter_mut().for_each(|x| *x = 0.0);
            let sum = match problem.order {
                3 => accumulate3(&problem.cand_grams, &prior_scaled, &scratch, &mut marg, ns),
                2 => accumulate2(&problem.cand_grams, &prior_scaled, &scratch, &mut marg, ns),
                _ => accumulate_n(problem.order, &problem.cand_grams, &prior_scaled, &scratch, &mut marg, ns),
            };
            if sum <= 0.0 || !sum.is_finite() {
                acc.zero.push(i);
                continue;
            }
            acc.loglik += w * (sum.ln() + log_scale);
            let scale = w / sum;
            for (k, &c) in g.iter().enumerate() {
                let row = acc.row(c, ns);
                for (r, &m) in row.iter_mut().zip(&marg[k * ns..(k + 1) * ns]) {
                    *r += m * scale;
                }
            }
        }
        acc
    };

    let n_blocks = n_grams.div_ceil(BLOCK);
    let mut out = Expectation {
        loglik: 0.0,
        counts: vec![0.0; nc * ns],
        zero_grams: Vec::new(),
    };
    let mut merge = |acc: BlockAcc| {
        out.loglik += acc.loglik;
        out.zero_grams.extend(acc.zero);
        for (c, row) in acc.rows {
            let dst = &mut out.counts[c as usize * ns..(c as usize + 1) * ns];
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
    };
    if parallel {
        // bounded waves keep memory flat; merging stays in block order
        let wave = 4 * rayon::current_num_threads().max(1);
        let mut start = 0;
        while start < n_blocks {
            let end = (start + wave).min(n_blocks);
            let accs: Vec<BlockAcc> = (start..end).into_par_iter().map(run_block).collect();
            accs.into_iter().for_each(&mut merge);
            start = end;
        }
    } else {
        (0..n_blocks).map(run_block).for_each(&mut merge);
    }
    out
}

#[inline]
fn accumulate3(grams: &[SymbolId], prior: &[f64], a: &[f64], marg: &mut [f64], ns: usize) -> f64 {
    let (a0, rest) = a.split_at(ns);
    let (a1, a2) = rest.split_at(ns);
    let (m0, rest) = marg.split_at_mut(ns);
    let (m1, m2) = rest.split_at_mut(ns);
    let mut sum = 0.0;
    for (g, &pr) in grams.chunks_exact(3).zip(prior) {
        let (x, y, z) = (g[0] as usize, g[1] as usize, g[2] as usize);
        let s = pr * a0[x] * a1[y] * a2[z];
        sum += s;
        m0[x] += s;
        m1[y] += s;
        m2[z] += s;
    }
    sum
}

#[inline]
fn accumulate2(grams: &[SymbolId], prior: &[f64], a: &[f64], marg: &mut [f64], ns: usize) -> f64 {
    let (a0, a1) = a.split_at(ns);
    let (m0, m1) = marg.split_at_mut(ns);
    let mut sum = 0.0;
    for (g, &pr) in grams.chunks_exact(2).zip(prior) {
        let (x, y) = (g[0] as usize, g[1] as usize);
        let s = pr * a0[x] * a1[y];
        sum += s;
        m0[x] += s;
        m1[y] += s;
    }
    sum
}

fn accumulate_n(order: usize, grams: &[SymbolId], prior: &[f64], a: &[f64], marg: &mut [f64], ns: usize) -> f64 {
    let mut sum = 0.0;
    for (g, &pr) in grams.chunks_exact(order).zip(prior) {
        let mut s = pr;
        for (k, &p) in g.iter().enumerate() {
            s *= a[k * ns + p as usize];
        }
        sum += s;
        for (k, &p) in g.iter().enumerate() {
            marg[k * ns + p as usize] += s;
        }
    }
    sum
}

/// E-step under `channel`: expected `(c, p)` counts and the corpus
/// log-likelihood.
pub fn expectation(problem: &EmProblem, channel: &ChannelTable, parallel: bool) -> Expectation {
    estep_cols(problem, &channel.transposed(), channel.n_syllables(), parallel)
}

/// Posterior over the candidates for character n-gram `i`, straight from
/// the definition (no rescaling). Used for inspection and testing.
pub fn posteriors(problem: &EmProblem, channel: &ChannelTable, i: usize) -> Vec<f64> {
    let (g, _) = problem.char_gram(i);
    let scores: Vec<f64> = (0..problem.num_candidates())
        .map(|j| {
            let (pg, pr) = problem.candidate(j);
            pr * g.iter().zip(pg).map(|(&c, &p)| channel.prob(c, p)).product::<f64>()
        })
        .collect();
    let sum: f64 = scores.iter().sum();
    if sum > 0.0 {
        scores.iter().map(|s| s / sum).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

/// `log Pr(C)` of the problem under `channel`. A character n-gram with zero
/// total score makes the value −∞; its index is returned alongside.
pub fn corpus_loglik(problem: &EmProblem, channel: &ChannelTable) -> (f64, Option<usize>) {
    let e = expectation(problem, channel, false);
    match e.zero_grams.first() {
        Some(&i) => (f64::NEG_INFINITY, Some(i)),
        None => (e.loglik, None),
    }
}

/// Turns string hint pairs into ids, rejecting unknown symbols.
pub fn resolve_hints(
    pairs: &[(String, String)],
    chars: &SymbolTable,
    syllables: &SymbolTable,
) -> Result<Vec<(SymbolId, SymbolId)>> {
    pairs
        .iter()
        .map(|(c, p)| {
            let ci = chars.get(c).ok_or_else(|| Error::UnknownSymbol {
                symbol: c.clone(),
                table: "character vocabulary",
            })?;
            let pi = syllables.get(p).ok_or_else(|| Error::UnknownSymbol {
                symbol: p.clone(),
                table: "syllable vocabulary",
            })?;
            Ok((ci, pi))
        })
        .collect()
}

fn check_hints(hints: &[(SymbolId, SymbolId)], nc: usize, ns: usize) -> Result<()> {
    for &(c, p) in hints {
        if c as usize >= nc || p as usize >= ns {
            return Err(Error::UnknownSymbol {
                symbol: format!("hint ({c}, {p})"),
                table: "channel vocabulary",
            });
        }
    }
    Ok(())
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, init: Init) -> Vec<f64> {
    let mut w: Vec<f64> = match init {
        Init::Uniform => vec![1.0; rows * cols],
        Init::Random => (0..rows * cols).map(|_| rng.random_range(0.5..1.5)).collect(),
    };
    for row in w.chunks_mut(cols.max(1)) {
        normalize(row);
    }
    w
}

/// Sets hinted entries of normalized rows to weight 1.0 and renormalizes.
fn apply_hints(probs: &mut [f64], nc: usize, hints: &[(SymbolId, SymbolId)]) {
    let mut touched = Vec::new();
    for &(c, p) in hints {
        probs[p as usize * nc + c as usize] = 1.0;
        touched.push(p as usize);
    }
    touched.sort_unstable();
    touched.dedup();
    for p in touched {
        normalize(&mut probs[p * nc..(p + 1) * nc]);
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Initial flat table: random (or uniform) rows, then hint entries raised
/// to weight 1.0 before a final normalization.
pub fn init_channel(
    chars: &SymbolTable,
    syllables: &SymbolTable,
    cfg: &EmConfig,
    restart: usize,
) -> Result<ChannelTable> {
    if chars.is_empty() || syllables.is_empty() {
        return Err(Error::Empty("channel vocabulary"));
    }
    let (nc, ns) = (chars.len(), syllables.len());
    check_hints(&cfg.hints, nc, ns)?;
    let mut rng = restart_rng(cfg.seed, restart);
    let mut probs = random_rows(&mut rng, ns, nc, cfg.init);
    apply_hints(&mut probs, nc, &cfg.hints);
    Ok(ChannelTable {
        chars: chars.clone(),
        syllables: syllables.clone(),
        probs,
    })
}

/// Component structure of a character vocabulary: for each character the
/// ids of its first and second parts in separate component tables.
#[derive(Clone, Debug)]
pub struct Components {
    part1: Vec<Option<u32>>,
    part2: Vec<Option<u32>>,
    part1_syms: SymbolTable,
    part2_syms: SymbolTable,
}

impl Components {
    pub fn new(chars: &SymbolTable, table: &DecompositionTable) -> Self {
        let mut part1_syms = SymbolTable::new();
        let mut part2_syms = SymbolTable::new();
        let mut part1 = Vec::with_capacity(chars.len());
        let mut part2 = Vec::with_capacity(chars.len());
        for (_, s) in chars.iter() {
            let mut it = s.chars();
            let d = match (it.next(), it.next()) {
                (Some(c), None) => table.decompose(c),
                _ => crate::phonology::Decomposition::Atomic,
            };
            let mut buf = [0u8; 4];
            part1.push(d.part1().map(|p| part1_syms.intern(p.encode_utf8(&mut buf))));
            part2.push(d.part2().map(|p| part2_syms.intern(p.encode_utf8(&mut buf))));
        }
        Self {
            part1,
            part2,
            part1_syms,
            part2_syms,
        }
    }

    pub fn part1(&self, c: SymbolId) -> Option<u32> {
        self.part1[c as usize]
    }

    pub fn part2(&self, c: SymbolId) -> Option<u32> {
        self.part2[c as usize]
    }

    pub fn part1_symbols(&self) -> &SymbolTable {
        &self.part1_syms
    }

    pub fn part2_symbols(&self) -> &SymbolTable {
        &self.part2_syms
    }
}

/// `Pr(c|p) = λ1·Pr1(c|p) + λ2·Pr2(part1(c)|p)·Pr3(c|part1(c)) + λ3·Pr4(part2(c)|p)·Pr5(c|part2(c))`.
///
/// `Pr3` and `Pr5` are stored per character: each character has exactly one
/// first (second) part, and the values are normalized within each group of
/// characters sharing it.
#[derive(Clone, Debug)]
pub struct FactoredChannel {
    lambdas: [f64; 3],
    chars: SymbolTable,
    syllables: SymbolTable,
    comps: Components,
    pr1: Vec<f64>, // [p * nc + c]
    pr2: Vec<f64>, // [p * k1 + q]
    pr3: Vec<f64>, // [c]
    pr4: Vec<f64>, // [p * k2 + q]
    pr5: Vec<f64>, // [c]
}

fn normalize_groups(values: &mut [f64], group: &[Option<u32>]) {
    let n_groups = group.iter().flatten().map(|&g| g as usize + 1).max().unwrap_or(0);
    let mut sums = vec![0.0; n_groups];
    for (v, g) in values.iter().zip(group) {
        if let Some(g) = g {
            sums[*g as usize] += v;
        }
    }
    for (v, g) in values.iter_mut().zip(group) {
        match g {
            Some(g) if sums[*g as usize] > 0.0 => *v /= sums[*g as usize],
            Some(_) => {}
            None => *v = 0.0,
        }
    }
}

impl FactoredChannel {
    pub fn new_random(
        chars: &SymbolTable,
        syllables: &SymbolTable,
        comps: Components,
        cfg: &EmConfig,
        restart: usize,
    ) -> Result<Self> {
        if chars.is_empty() || syllables.is_empty() {
            return Err(Error::Empty("channel vocabulary"));
        }
        let (nc, ns) = (chars.len(), syllables.len());
        check_hints(&cfg.hints, nc, ns)?;
        let k1 = comps.part1_syms.len();
        let k2 = comps.part2_syms.len();
        let mut rng = restart_rng(cfg.seed, restart);
        let mut pr1 = random_rows(&mut rng, ns, nc, cfg.init);
        apply_hints(&mut pr1, nc, &cfg.hints);
        let pr2 = random_rows(&mut rng, ns, k1, cfg.init);
        let mut pr3 = random_rows(&mut rng, 1, nc, cfg.init);
        normalize_groups(&mut pr3, &comps.part1);
        let pr4 = random_rows(&mut rng, ns, k2, cfg.init);
        let mut pr5 = random_rows(&mut rng, 1, nc, cfg.init);
        normalize_groups(&mut pr5, &comps.part2);
        Ok(Self {
            lambdas: cfg.lambdas,
            chars: chars.clone(),
            syllables: syllables.clone(),
            comps,
            pr1,
            pr2,
            pr3,
            pr4,
            pr5,
        })
    }

    /// Assembles a channel from explicit tables (each must already be
    /// normalized as documented on the type).
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        lambdas: [f64; 3],
        chars: SymbolTable,
        syllables: SymbolTable,
        comps: Components,
        pr1: Vec<f64>,
        pr2: Vec<f64>,
        pr3: Vec<f64>,
        pr4: Vec<f64>,
        pr5: Vec<f64>,
    ) -> Result<Self> {
        let (nc, ns) = (chars.len(), syllables.len());
        let (k1, k2) = (comps.part1_syms.len(), comps.part2_syms.len());
        for (got, want) in [
            (pr1.len(), ns * nc),
            (pr2.len(), ns * k1),
            (pr3.len(), nc),
            (pr4.len(), ns * k2),
            (pr5.len(), nc),
        ] {
            if got != want {
                return Err(Error::LengthMismatch(got, want));
            }
        }
        Ok(Self {
            lambdas,
            chars,
            syllables,
            comps,
            pr1,
            pr2,
            pr3,
            pr4,
            pr5,
        })
    }

    pub fn lambdas(&self) -> [f64; 3] {
        self.lambdas
    }

    pub fn components(&self) -> &Components {
        &self.comps
    }

    pub fn pr1(&self, c: SymbolId, p: SymbolId) -> f64 {
        self.pr1[p as usize * self.chars.len() + c as usize]
    }

    /// `Pr2(q | p)` for a first-part component id `q`.
    pub fn pr2(&self, q: u32, p: SymbolId) -> f64 {
        self.pr2[p as usize * self.comps.part1_syms.len() + q as usize]
    }

    pub fn pr3(&self, c: SymbolId) -> f64 {
        self.pr3[c as usize]
    }

    /// `Pr4(q | p)` for a second-part component id `q`.
    pub fn pr4(&self, q: u32, p: SymbolId) -> f64 {
        self.pr4[p as usize * self.comps.part2_syms.len() + q as usize]
    }

    pub fn pr5(&self, c: SymbolId) -> f64 {
        self.pr5[c as usize]
    }

    /// The three mixture terms for `(c, p)` before normalization.
    fn terms(&self, c: SymbolId, p: SymbolId) -> [f64; 3] {
        let [l1, l2, l3] = self.lambdas;
        let t1 = l1 * self.pr1(c, p);
        let t2 = self.comps.part1(c).map_or(0.0, |q| l2 * self.pr2(q, p) * self.pr3(c));
        let t3 = self.comps.part2(c).map_or(0.0, |q| l3 * self.pr4(q, p) * self.pr5(c));
        [t1, t2, t3]
    }

    fn raw_rows(&self) -> Vec<f64> {
        let (nc, ns) = (self.chars.len(), self.syllables.len());
        let mut raw = vec![0.0; nc * ns];
        for p in 0..ns {
            for c in 0..nc {
                raw[p * nc + c] = self.terms(c as SymbolId, p as SymbolId).iter().sum();
            }
        }
        raw
    }

    /// Evaluated `Pr_θ(c | p)`, each row renormalized over the character
    /// vocabulary.
    pub fn factored_prob(&self, c: SymbolId, p: SymbolId) -> f64 {
        let nc = self.chars.len() as SymbolId;
        let z: f64 = (0..nc).map(|x| self.terms(x, p).iter().sum::<f64>()).sum();
        let raw: f64 = self.terms(c, p).iter().sum();
        if z > 0.0 {
            raw / z
        } else {
            0.0
        }
    }

    /// The evaluated model as a flat table.
    pub fn materialize(&self) -> ChannelTable {
        ChannelTable::from_weights(self.chars.clone(), self.syllables.clone(), self.raw_rows())
            .expect("factored tables are finite and non-negative")
    }

    /// Re-estimates all five tables from expected `(c, p)` counts, crediting
    /// each mixture term in proportion to its share of `Pr_θ(c|p)`.
    fn reestimate(&mut self, counts: &[f64]) {
        let (nc, ns) = (self.chars.len(), self.syllables.len());
        let (k1, k2) = (self.comps.part1_syms.len(), self.comps.part2_syms.len());
        let mut c1 = vec![0.0; ns * nc];
        let mut c2 = vec![0.0; ns * k1];
        let mut c3 = vec![0.0; nc];
        let mut c4 = vec![0.0; ns * k2];
        let mut c5 = vec![0.0; nc];
        for c in 0..nc {
            for p in 0..ns {
                let n = counts[c * ns + p];
                if n == 0.0 {
                    continue;
                }
                let t = self.terms(c as SymbolId, p as SymbolId);
                let raw: f64 = t.iter().sum();
                if raw <= 0.0 {
                    continue;
                }
                c1[p * nc + c] += n * t[0] / raw;
                if let Some(q) = self.comps.part1[c] {
                    let v = n * t[1] / raw;
                    c2[p * k1 + q as usize] += v;
                    c3[c] += v;
                }
                if let Some(q) = self.comps.part2[c] {
                    let v = n * t[2] / raw;
                    c4[p * k2 + q as usize] += v;
                    c5[c] += v;
                }
            }
        }
        update_rows(&mut self.pr1, &c1, nc);
        update_rows(&mut self.pr2, &c2, k1);
        update_rows(&mut self.pr4, &c4, k2);
        update_groups(&mut self.pr3, &c3, &self.comps.part1);
        update_groups(&mut self.pr5, &c5, &self.comps.part2);
    }
}

/// Normalizes each row of `counts` into `probs`; rows without mass keep
/// their previous values.
fn update_rows(probs: &mut [f64], counts: &[f64], width: usize) {
    if width == 0 {
        return;
    }
    for (dst, src) in probs.chunks_mut(width).zip(counts.chunks(width)) {
        let s: f64 = src.iter().sum();
        if s > 0.0 {
            for (d, v) in dst.iter_mut().zip(src) {
                *d = v / s;
            }
        }
    }
}

fn update_groups(probs: &mut [f64], counts: &[f64], group: &[Option<u32>]) {
    let n_groups = group.iter().flatten().map(|&g| g as usize + 1).max().unwrap_or(0);
    let mut sums = vec![0.0; n_groups];
    for (v, g) in counts.iter().zip(group) {
        if let Some(g) = g {
            sums[*g as usize] += v;
        }
    }
    for ((d, v), g) in probs.iter_mut().zip(counts).zip(group) {
        if let Some(g) = g {
            if sums[*g as usize] > 0.0 {
                *d = v / sums[*g as usize];
            }
        }
    }
}

/// Flat M-step: `Pr(c|p) ∝ count(c, p)`; syllables with no expected counts
/// keep their previous row.
pub fn maximize(channel: &mut ChannelTable, counts: &[f64]) {
    let (nc, ns) = (channel.n_chars(), channel.n_syllables());
    for p in 0..ns {
        let total: f64 = (0..nc).map(|c| counts[c * ns + p]).sum();
        if total > 0.0 {
            for c in 0..nc {
                channel.probs[p * nc + c] = counts[c * ns + p] / total;
            }
        }
    }
}

/// The trained model of one EM run.
#[derive(Clone, Debug)]
pub struct EmRun {
    pub restart: usize,
    /// Evaluated substitution table (the factored model flattened in factored mode).
    pub channel: ChannelTable,
    pub factored: Option<FactoredChannel>,
    pub trace: LikelihoodTrace,
    pub warnings: Vec<String>,
}

impl EmRun {
    pub fn meta(&self, cfg: &EmConfig) -> ChannelMeta {
        ChannelMeta {
            mode: cfg.mode,
            lambdas: if cfg.mode == EmMode::Factored { cfg.lambdas } else { [1.0, 0.0, 0.0] },
            iterations: self.trace.values.len().saturating_sub(1),
            loglik: self.trace.final_value(),
        }
    }
}

enum Model {
    Flat(ChannelTable),
    Factored(FactoredChannel),
}

impl Model {
    fn table(&self) -> ChannelTable {
        match self {
            Model::Flat(t) => t.clone(),
            Model::Factored(f) => f.materialize(),
        }
    }
}

/// One EM run (restart index `restart`). `components` is required in
/// factored mode.
pub fn em_train(
    problem: &EmProblem,
    cfg: &EmConfig,
    components: Option<&Components>,
    restart: usize,
) -> Result<EmRun> {
    cfg.validate()?;
    if problem.order != cfg.mode.order() {
        return Err(Error::Config(format!(
            "mode {} trains on order {} but the problem has order {}",
            cfg.mode.as_str(),
            cfg.mode.order(),
            problem.order
        )));
    }
    let mut model = match cfg.mode {
        EmMode::Flat | EmMode::Pair => Model::Flat(init_channel(&problem.chars, &problem.syllables, cfg, restart)?),
        EmMode::Factored => {
            let comps = components
                .ok_or_else(|| Error::Config("factored mode needs a decomposition table".into()))?
                .clone();
            Model::Factored(FactoredChannel::new_random(&problem.chars, &problem.syllables, comps, cfg, restart)?)
        }
    };
    let ns = problem.syllables.len();
    let mut trace = LikelihoodTrace::default();
    let mut warnings = Vec::new();
    for iter in 0..=cfg.iterations {
        let table = model.table();
        let e = estep_cols(problem, &table.transposed(), ns, cfg.parallel);
        if !e.zero_grams.is_empty() {
            let msg = format!(
                "iteration {iter}: {} character n-grams have zero score under every candidate and contribute no counts",
                e.zero_grams.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        trace.values.push(e.loglik);
        if iter == cfg.iterations {
            break;
        }
        match &mut model {
            Model::Flat(t) => maximize(t, &e.counts),
            Model::Factored(f) => f.reestimate(&e.counts),
        }
        log::debug!("restart {restart} iteration {iter}: loglik {}", e.loglik);
    }
    let channel = model.table();
    let factored = match model {
        Model::Factored(f) => Some(f),
        Model::Flat(_) => None,
    };
    Ok(EmRun {
        restart,
        channel,
        factored,
        trace,
        warnings,
    })
}

/// Runs `cfg.restarts` independent restarts and returns them all together
/// with the index of the best by final log-likelihood.
pub fn em_train_restarts(
    problem: &EmProblem,
    cfg: &EmConfig,
    components: Option<&Components>,
) -> Result<(Vec<EmRun>, usize)> {
    cfg.validate()?;
    let runs: Vec<EmRun> = if cfg.parallel && cfg.restarts > 1 {
        let inner = EmConfig {
            parallel: false,
            ..cfg.clone()
        };
        (0..cfg.restarts)
            .into_par_iter()
            .map(|r| em_train(problem, &inner, components, r))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.restarts)
            .map(|r| em_train(problem, cfg, components, r))
            .collect::<Result<_>>()?
    };
    let traces: Vec<&LikelihoodTrace> = runs.iter().map(|r| &r.trace).collect();
    let best = crate::pipeline::select_best_restart(&traces)?;
    Ok((runs, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::build_vocab;

    fn toy() -> (EmProblem, SymbolTable, SymbolTable) {
        let chars = build_vocab(["A", "B", "C"]);
        let syls = build_vocab(["x", "y"]);
        let mut cc = NgramCounts::new(3);
        cc.add(&[0, 1, 2], 5);
        cc.add(&[1, 1, 0], 2);
        cc.add(&[2, 0, 1], 1);
        let prior = NgramPrior {
            order: 3,
            entries: vec![
                (vec![0, 1, 1], 0.4),
                (vec![1, 1, 0], 0.3),
                (vec![0, 0, 0], 0.2),
                (vec![1, 0, 1], 0.1),
            ],
        };
        let p = EmProblem::new(&cc, &chars, &prior, &syls, 10).unwrap();
        (p, chars, syls)
    }

    fn cfg(mode: EmMode) -> EmConfig {
        EmConfig {
            n: 10,
            m: 10,
            iterations: 20,
            restarts: 1,
            seed: 7,
            mode,
            parallel: false,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_init_rows() {
        let chars = build_vocab(["a", "b", "c", "d"]);
        let syls = build_vocab(["x"]);
        let c = EmConfig {
            init: Init::Uniform,
            ..cfg(EmMode::Flat)
        };
        let t = init_channel(&chars, &syls, &c, 0).unwrap();
        assert!(t.row(0).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn hints_dominate_their_row_and_unknown_hints_fail() {
        let chars: SymbolTable = (0..50).map(|i| format!("c{i}")).collect();
        let syls = build_vocab(["yao", "zhong"]);
        let mut c = cfg(EmMode::Flat);
        c.hints = vec![(7, 0)];
        let t = init_channel(&chars, &syls, &c, 0).unwrap();
        let row = t.row(0);
        let max_other = row.iter().enumerate().filter(|(i, _)| *i != 7).map(|(_, v)| *v).fold(0.0, f64::max);
        assert!(row[7] > 10.0 * max_other);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        c.hints = vec![(99, 0)];
        assert!(init_channel(&chars, &syls, &c, 0).is_err());
    }

    #[test]
    fn same_seed_same_table() {
        let (p, chars, syls) = toy();
        let c = cfg(EmMode::Flat);
        assert_eq!(init_channel(&chars, &syls, &c, 3).unwrap(), init_channel(&chars, &syls, &c, 3).unwrap());
        assert_ne!(init_channel(&chars, &syls, &c, 3).unwrap(), init_channel(&chars, &syls, &c, 4).unwrap());
        let a = em_train(&p, &c, None, 0).unwrap();
        let b = em_train(&p, &c, None, 0).unwrap();
        assert_eq!(a.channel, b.channel);
    }

    #[test]
    fn single_candidate_posterior_is_one() {
        let chars = build_vocab(["A", "B", "C"]);
        let syls = build_vocab(["x", "y", "z"]);
        let mut cc = NgramCounts::new(3);
        cc.add(&[0, 1, 2], 4);
        let prior = NgramPrior {
            order: 3,
            entries: vec![(vec![2, 0, 1], 1.0)],
        };
        let p = EmProblem::new(&cc, &chars, &prior, &syls, 1).unwrap();
        let mut c = cfg(EmMode::Flat);
        c.iterations = 1;
        let run = em_train(&p, &c, None, 0).unwrap();
        assert_eq!(run.channel.prob(0, 2), 1.0);
        assert_eq!(run.channel.prob(1, 0), 1.0);
        assert_eq!(run.channel.prob(2, 1), 1.0);
    }

    #[test]
    fn trace_is_monotone_and_matches_corpus_loglik() {
        let (p, _, _) = toy();
        let run = em_train(&p, &cfg(EmMode::Flat), None, 0).unwrap();
        assert!(run.trace.is_monotone(1e-9), "{:?}", run.trace.values);
        let (ll, zero) = corpus_loglik(&p, &run.channel);
        assert!(zero.is_none());
        assert!((ll - run.trace.final_value()).abs() <= 1e-12 * ll.abs());
        assert!(run.channel.max_row_error() < 1e-9);
    }

    #[test]
    fn parallel_estep_equals_sequential() {
        let (p, chars, syls) = toy();
        let t = init_channel(&chars, &syls, &cfg(EmMode::Flat), 1).unwrap();
        let a = expectation(&p, &t, false);
        let b = expectation(&p, &t, true);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.loglik, b.loglik);
    }

    #[test]
    fn zero_score_grams_are_skipped_and_reported() {
        let (p, chars, syls) = toy();
        // character C has no support anywhere
        let mut w = vec![1.0; 6];
        w[2] = 0.0;
        w[5] = 0.0;
        let t = ChannelTable::from_weights(chars, syls, w).unwrap();
        let e = expectation(&p, &t, false);
        assert_eq!(e.zero_grams.len(), 2);
        let (ll, first) = corpus_loglik(&p, &t);
        assert_eq!(ll, f64::NEG_INFINITY);
        assert!(first.is_some());
    }

    #[test]
    fn factored_degenerate_weights_match_flat_lookup() {
        let chars = build_vocab(["排", "徘", "非"]);
        let syls = build_vocab(["pai", "fei"]);
        let decomp = DecompositionTable::from_tsv("排\t扌\t非\n徘\t彳\t非\n").unwrap();
        let comps = Components::new(&chars, &decomp);
        let mut c = cfg(EmMode::Factored);
        c.lambdas = [1.0, 0.0, 0.0];
        let f = FactoredChannel::new_random(&chars, &syls, comps, &c, 0).unwrap();
        for p in 0..2 {
            for ch in 0..3 {
                assert!((f.factored_prob(ch, p) - f.pr1(ch, p)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn factored_formula_arithmetic() {
        let chars = build_vocab(["徘", "非"]);
        let syls = build_vocab(["pai"]);
        let decomp = DecompositionTable::from_tsv("徘\t彳\t非\n").unwrap();
        let comps = Components::new(&chars, &decomp);
        // part2 table has one component (非); Pr4(非|pai) = 0.2, Pr5(徘|非) = 0.1
        let f = FactoredChannel::from_tables(
            [0.0, 0.0, 0.5],
            chars,
            syls,
            comps,
            vec![0.5, 0.5],
            vec![1.0],
            vec![1.0, 0.0],
            vec![0.2],
            vec![0.1, 0.0],
        )
        .unwrap();
        let t = f.terms(0, 0);
        assert!((t.iter().sum::<f64>() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn factored_rows_normalized_and_monotone() {
        let (p, chars, _) = toy();
        let decomp = DecompositionTable::from_tsv("A\tq\tr\nB\tq\t\nC\ts\tr\n").unwrap();
        let comps = Components::new(&chars, &decomp);
        let run = em_train(&p, &cfg(EmMode::Factored), Some(&comps), 0).unwrap();
        assert!(run.trace.is_monotone(1e-9), "{:?}", run.trace.values);
        let f = run.factored.as_ref().unwrap();
        for ps in 0..2 {
            let s: f64 = (0..3).map(|c| f.factored_prob(c, ps)).sum();
            assert!(s <= 1.0 + 1e-6 && (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tsv_round_trip() {
        let (p, _, _) = toy();
        let c = cfg(EmMode::Flat);
        let run = em_train(&p, &c, None, 0).unwrap();
        let text = run.channel.to_tsv(&run.meta(&c));
        let (back, meta) = ChannelTable::from_tsv(&text).unwrap();
        assert_eq!(meta.mode, EmMode::Flat);
        assert_eq!(meta.iterations, 20);
        for ps in 0..2 {
            for ch in 0..3 {
                assert!((back.prob(ch, ps) - run.channel.prob(ch, ps)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(EmMode::Flat);
        c.n = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(EmMode::Flat);
        c.lambdas = [0.5, 0.5, 0.5];
        assert!(c.validate().is_err());
        let (p, _, _) = toy();
        assert!(em_train(&p, &cfg(EmMode::Pair), None, 0).is_err());
        assert!(em_train(&p, &cfg(EmMode::Factored), None, 0).is_err());
    }
}
