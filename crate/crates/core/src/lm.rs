//! N-gram language models over syllables.
//!
//! One [`NgramLM`] serves two roles: its unsmoothed joint n-gram
//! probabilities (count / total) form the prior table the EM trainer
//! explains character n-grams with, and its conditional tables (optionally
//! add-δ smoothed) score whole sequences during decoding.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::symbols::{NgramCounts, SymbolId, SymbolTable, BOS, BOS_STR};

const UNSEEN: &str = "<unseen>";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothing {
    None,
    /// Add-δ: `(c + δ) / (N + δ·V)`.
    Additive(f64),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Additive(0.1)
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothing::None => f.write_str("none"),
            Smoothing::Additive(d) => write!(f, "add:{d}"),
        }
    }
}

impl FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Smoothing::None);
        }
        let delta = s
            .strip_prefix("add:")
            .and_then(|d| d.parse::<f64>().ok())
            .filter(|d| *d > 0.0 && d.is_finite())
            .ok_or_else(|| Error::Config(format!("bad smoothing {s:?} (none | add:δ)")))?;
        Ok(Smoothing::Additive(delta))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct HistoryRow {
    seen: HashMap<SymbolId, f64>,
    unseen: f64,
}

/// Log probability of a sequence. `zero_at` flags the first position whose
/// conditional probability was zero (value is then −∞).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProb {
    pub value: f64,
    pub zero_at: Option<usize>,
}

/// Top-M n-grams by joint probability, the candidate set EM explains
/// character n-grams with.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramPrior {
    pub order: usize,
    pub entries: Vec<(Vec<SymbolId>, f64)>,
}

impl NgramPrior {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgramLM {
    order: usize,
    vocab: SymbolTable,
    smoothing: Smoothing,
    rows: HashMap<Vec<SymbolId>, HistoryRow>,
    // unsmoothed joint probabilities sorted descending; empty when loaded from file
    joint: Vec<(Vec<SymbolId>, f64)>,
}

/// Builds an LM from counts over `vocab`. Histories may contain [`BOS`].
pub fn train_lm(counts: &NgramCounts, vocab: &SymbolTable, smoothing: Smoothing) -> Result<NgramLM> {
    if counts.is_empty() {
        return Err(Error::Empty("n-gram counts"));
    }
    if vocab.is_empty() {
        return Err(Error::Empty("language model vocabulary"));
    }
    let n = counts.order();
    let v = vocab.len() as f64;
    let mut by_history: HashMap<Vec<SymbolId>, Vec<(SymbolId, u64)>> = HashMap::new();
    for (ngram, c) in counts.iter() {
        let w = ngram[n - 1];
        if w == BOS || w as usize >= vocab.len() {
            return Err(Error::UnknownSymbol {
                symbol: w.to_string(),
                table: "language model vocabulary",
            });
        }
        by_history.entry(ngram[..n - 1].to_vec()).or_default().push((w, c));
    }
    let rows = by_history
        .into_iter()
        .map(|(h, ws)| {
            let total: u64 = ws.iter().map(|&(_, c)| c).sum();
            let row = match smoothing {
                Smoothing::None => HistoryRow {
                    seen: ws.iter().map(|&(w, c)| (w, c as f64 / total as f64)).collect(),
                    unseen: 0.0,
                },
                Smoothing::Additive(d) => {
                    let z = total as f64 + d * v;
                    HistoryRow {
                        seen: ws.iter().map(|&(w, c)| (w, (c as f64 + d) / z)).collect(),
                        unseen: d / z,
                    }
                }
            };
            (h, row)
        })
        .collect();

    let real: Vec<(Vec<SymbolId>, u64)> = counts
        .sorted()
        .into_iter()
        .filter(|(g, _)| !g.contains(&BOS))
        .collect();
    let total: u64 = real.iter().map(|(_, c)| c).sum();
    let joint = real
        .into_iter()
        .map(|(g, c)| (g, c as f64 / total as f64))
        .collect();

    Ok(NgramLM {
        order: n,
        vocab: vocab.clone(),
        smoothing,
        rows,
        joint,
    })
}

impl NgramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &SymbolTable {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn is_smoothed(&self) -> bool {
        !matches!(self.smoothing, Smoothing::None)
    }

    /// Pr(w | history). `history.len()` must be `order - 1`.
    pub fn cond_prob(&self, history: &[SymbolId], w: SymbolId) -> f64 {
        debug_assert_eq!(history.len(), self.order - 1);
        if w as usize >= self.vocab.len() {
            return 0.0;
        }
        match self.rows.get(history) {
            Some(row) => row.seen.get(&w).copied().unwrap_or(row.unseen),
            None => match self.smoothing {
                Smoothing::None => 0.0,
                Smoothing::Additive(_) => 1.0 / self.vocab.len() as f64,
            },
        }
    }

    /// Unsmoothed joint probability count(g) / total of a stored n-gram.
    pub fn joint_prob(&self, ngram: &[SymbolId]) -> f64 {
        self.joint
            .iter()
            .find(|(g, _)| g == ngram)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    /// The full joint table, sorted by descending probability.
    pub fn joint(&self) -> &[(Vec<SymbolId>, f64)] {
        &self.joint
    }

    /// The top `m` n-grams by joint probability.
    pub fn prior(&self, m: usize) -> Result<NgramPrior> {
        if self.joint.is_empty() {
            return Err(Error::Empty("joint n-gram table (model was not trained from counts)"));
        }
        Ok(NgramPrior {
            order: self.order,
            entries: self.joint.iter().take(m).cloned().collect(),
        })
    }

    /// Sum of conditional log probabilities with one line of start padding.
    pub fn logprob(&self, seq: &[SymbolId]) -> LogProb {
        let mut ctx = vec![BOS; self.order - 1];
        let mut total = 0.0;
        let mut zero_at = None;
        for (i, &w) in seq.iter().enumerate() {
            let p = self.cond_prob(&ctx, w);
            if p <= 0.0 && zero_at.is_none() {
                zero_at = Some(i);
            }
            total += p.ln();
            if !ctx.is_empty() {
                ctx.remove(0);
                ctx.push(w);
            }
        }
        LogProb {
            value: if zero_at.is_some() { f64::NEG_INFINITY } else { total },
            zero_at,
        }
    }

    /// Mass assigned to the full vocabulary after `history`.
    pub fn row_mass(&self, history: &[SymbolId]) -> f64 {
        (0..self.vocab.len() as SymbolId)
            .map(|w| self.cond_prob(history, w))
            .sum()
    }

    /// Histories with stored statistics.
    pub fn histories(&self) -> impl Iterator<Item = &[SymbolId]> + '_ {
        self.rows.keys().map(Vec::as_slice)
    }

    /// TSV form: a header, the vocabulary, then `history<TAB>w<TAB>prob`
    /// rows plus one `<unseen>` row per smoothed history.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#lm\torder={}\tV={}\tsmoothing={}",
            self.order,
            self.vocab.len(),
            self.smoothing
        );
        let _ = writeln!(out, "#vocab\t{}", self.vocab.strings().join(" "));
        let render = |h: &[SymbolId]| -> String {
            h.iter()
                .map(|&id| self.vocab.lookup(id).unwrap_or(BOS_STR))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut histories: Vec<_> = self.rows.iter().collect();
        histories.sort_by(|a, b| a.0.cmp(b.0));
        for (h, row) in histories {
            let hs = render(h);
            let mut seen: Vec<_> = row.seen.iter().collect();
            seen.sort_by_key(|(w, _)| **w);
            for (&w, &p) in seen {
                let _ = writeln!(out, "{hs}\t{}\t{p:e}", self.vocab.resolve(w));
            }
            if row.unseen > 0.0 {
                let _ = writeln!(out, "{hs}\t{UNSEEN}\t{:e}", row.unseen);
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::parse("language model", line, msg);
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut order = None;
        let mut v = None;
        let mut smoothing = None;
        for field in header.split('\t').skip(1) {
            match field.split_once('=') {
                Some(("order", x)) => order = x.parse::<usize>().ok(),
                Some(("V", x)) => v = x.parse::<usize>().ok(),
                Some(("smoothing", x)) => smoothing = Some(x.parse::<Smoothing>()?),
                _ => return Err(err(1, "unknown header field")),
            }
        }
        let (order, v, smoothing) = match (order, v, smoothing) {
            (Some(o), Some(v), Some(s)) if o >= 1 => (o, v, s),
            _ => return Err(err(1, "header needs order, V and smoothing")),
        };
        let (_, vocab_line) = lines.next().ok_or_else(|| err(2, "missing vocabulary"))?;
        let vocab: SymbolTable = vocab_line
            .strip_prefix("#vocab\t")
            .ok_or_else(|| err(2, "expected #vocab line"))?
            .split_whitespace()
            .collect();
        if vocab.len() != v {
            return Err(err(2, "vocabulary size does not match header"));
        }
        let mut rows: HashMap<Vec<SymbolId>, HistoryRow> = HashMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let mut parts = line.split('\t');
            let (h, w, p) = match (parts.next(), parts.next(), parts.next()) {
                (Some(h), Some(w), Some(p)) => (h, w, p),
                _ => return Err(err(lineno, "expected history<TAB>word<TAB>prob")),
            };
            let history = h
                .split_whitespace()
                .map(|t| {
                    if t == BOS_STR {
                        Ok(BOS)
                    } else {
                        vocab.get(t).ok_or_else(|| err(lineno, "unknown history symbol"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if history.len() != order - 1 {
                return Err(err(lineno, "history length does not match order"));
            }
            let p: f64 = p.parse().map_err(|_| err(lineno, "bad probability"))?;
            let row = rows.entry(history).or_default();
            if w == UNSEEN {
                row.unseen = p;
            } else {
                let id = vocab.get(w).ok_or_else(|| err(lineno, "unknown word"))?;
                row.seen.insert(id, p);
            }
        }
        Ok(NgramLM {
            order,
            vocab,
            smoothing,
            rows,
            joint: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{count_ngrams, count_ngrams_padded, Domain, TokenStream};
    use proptest::prelude::*;

    fn corpus(lines: &[&str], n: usize, padded: bool, s: Smoothing) -> (NgramLM, SymbolTable) {
        let mut t = SymbolTable::new();
        let stream = TokenStream::from_text(Domain::Syllable, lines.iter().copied(), &mut t);
        let counts = if padded {
            count_ngrams_padded(&stream, n).unwrap()
        } else {
            count_ngrams(&stream, n).unwrap()
        };
        (train_lm(&counts, &t, s).unwrap(), t)
    }

    #[test]
    fn additive_hand_computation() {
        let vocab: SymbolTable = ["a", "b"].into_iter().collect();
        let mut c = NgramCounts::new(2);
        c.add(&[0, 1], 1);
        let lm = train_lm(&c, &vocab, Smoothing::Additive(1.0)).unwrap();
        assert!((lm.cond_prob(&[0], 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((lm.cond_prob(&[0], 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_type_unigram_is_certain() {
        let (lm, _) = corpus(&["a a a a"], 1, false, Smoothing::None);
        assert_eq!(lm.cond_prob(&[], 0), 1.0);
        assert_eq!(lm.logprob(&[0, 0]).value, 0.0);
    }

    #[test]
    fn empty_counts_are_rejected() {
        let vocab: SymbolTable = ["a"].into_iter().collect();
        assert!(train_lm(&NgramCounts::new(2), &vocab, Smoothing::None).is_err());
    }

    #[test]
    fn unsmoothed_unknown_continuation_is_flagged() {
        let (lm, _) = corpus(&["a b a b"], 2, true, Smoothing::None);
        let lp = lm.logprob(&[0, 0]);
        assert_eq!(lp.value, f64::NEG_INFINITY);
        assert_eq!(lp.zero_at, Some(1));
        let (sm, _) = corpus(&["a b a b"], 2, true, Smoothing::Additive(0.1));
        assert!(sm.logprob(&[0, 0]).value.is_finite());
    }

    #[test]
    fn logprob_is_sum_of_steps() {
        let (lm, _) = corpus(&["a b c a b", "c c a"], 2, true, Smoothing::Additive(0.5));
        let seq = [0, 1, 2];
        let expected = lm.cond_prob(&[BOS], 0).ln() + lm.cond_prob(&[0], 1).ln() + lm.cond_prob(&[1], 2).ln();
        assert!((lm.logprob(&seq).value - expected).abs() < 1e-12);
    }

    #[test]
    fn brute_force_normalization_over_length_two() {
        let (lm, t) = corpus(&["a b c a b", "c c a", "b"], 2, true, Smoothing::Additive(0.1));
        let v = t.len() as u32;
        let mut total = 0.0;
        for x in 0..v {
            for y in 0..v {
                total += lm.logprob(&[x, y]).value.exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn joint_prior_sums_to_one() {
        let (lm, _) = corpus(&["a b c a b c a", "b c a b"], 3, false, Smoothing::None);
        let s: f64 = lm.joint().iter().map(|(_, p)| p).sum();
        assert!((s - 1.0).abs() < 1e-9);
        let top = lm.prior(2).unwrap();
        assert_eq!(top.len(), 2);
        assert!(top.entries[0].1 >= top.entries[1].1);
    }

    #[test]
    fn tsv_round_trip() {
        let (lm, _) = corpus(&["a b c a b", "c c a"], 2, true, Smoothing::Additive(0.1));
        let back = NgramLM::from_tsv(&lm.to_tsv()).unwrap();
        for h in [BOS, 0, 1, 2] {
            for w in 0..3 {
                assert!((lm.cond_prob(&[h], w) - back.cond_prob(&[h], w)).abs() < 1e-15);
            }
        }
        assert_eq!(back.smoothing(), Smoothing::Additive(0.1));
    }

    #[test]
    fn smoothing_spec_parses() {
        assert_eq!("none".parse::<Smoothing>().unwrap(), Smoothing::None);
        assert_eq!("add:0.1".parse::<Smoothing>().unwrap(), Smoothing::Additive(0.1));
        assert!("add:-1".parse::<Smoothing>().is_err());
        assert!("kn".parse::<Smoothing>().is_err());
    }

    proptest! {
        #[test]
        fn rows_are_normalized(ids in prop::collection::vec(0u32..5, 3..80), delta in 0.01f64..2.0, smooth in any::<bool>()) {
            let vocab: SymbolTable = ["a", "b", "c", "d", "e"].into_iter().collect();
            let stream = TokenStream::from_ids(Domain::Syllable, ids);
            let counts = count_ngrams_padded(&stream, 2).unwrap();
            let s = if smooth { Smoothing::Additive(delta) } else { Smoothing::None };
            let lm = train_lm(&counts, &vocab, s).unwrap();
            for h in lm.histories() {
                prop_assert!((lm.row_mass(h) - 1.0).abs() < 1e-9);
            }
            if smooth {
                for h in [BOS, 0, 1, 2, 3, 4] {
                    for w in 0..5 {
                        prop_assert!(lm.cond_prob(&[h], w) > 0.0);
                    }
                }
            }
        }

        #[test]
        fn additive_is_monotone_in_counts(ids in prop::collection::vec(0u32..4, 3..60), h in 0u32..4, w in 0u32..4) {
            let vocab: SymbolTable = ["a", "b", "c", "d"].into_iter().collect();
            let stream = TokenStream::from_ids(Domain::Syllable, ids);
            let counts = count_ngrams(&stream, 2).unwrap();
            let mut more = counts.clone();
            more.add(&[h, w], 1);
            let s = Smoothing::Additive(0.1);
            let before = train_lm(&counts, &vocab, s).unwrap().cond_prob(&[h], w);
            let after = train_lm(&more, &vocab, s).unwrap().cond_prob(&[h], w);
            prop_assert!(after >= before);
        }
    }
}
