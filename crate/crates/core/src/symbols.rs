//! Interned vocabularies, integer-coded token streams and n-gram counting.
//!
//! Every corpus in the system (characters, syllables, segmented words) is
//! reduced to a [`TokenStream`] over a [`SymbolTable`]. Streams remember
//! their line structure: n-gram windows never cross a line boundary.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SymbolId = u32;

/// Synthetic start-of-line context. Never stored in a [`SymbolTable`].
pub const BOS: SymbolId = u32::MAX;

/// Rendering of [`BOS`] in text files.
pub const BOS_STR: &str = "<s>";

/// Dense bijection between token strings and `0..len()`, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    strings: Vec<String>,
    index: HashMap<String, SymbolId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, s: &str) -> SymbolId {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.strings.len() as SymbolId;
        self.strings.push(s.to_owned());
        self.index.insert(s.to_owned(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<SymbolId> {
        self.index.get(s).copied()
    }

    pub fn lookup(&self, id: SymbolId) -> Option<&str> {
        if id == BOS {
            return Some(BOS_STR);
        }
        self.strings.get(id as usize).map(String::as_str)
    }

    /// Like [`lookup`](Self::lookup) but panics on a foreign id.
    pub fn resolve(&self, id: SymbolId) -> &str {
        self.lookup(id)
            .unwrap_or_else(|| panic!("symbol id {id} out of range ({} symbols)", self.len()))
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymbolId, &str)> + '_ {
        self.strings
            .iter()
            .enumerate()
            .map(|(i, s)| (i as SymbolId, s.as_str()))
    }

    pub fn strings(&self) -> &[String] {
        &self.strings
    }

    pub fn render(&self, ids: &[SymbolId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.resolve(id));
        }
        out
    }
}

impl<S: AsRef<str>> FromIterator<S> for SymbolTable {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut table = SymbolTable::new();
        for s in iter {
            table.intern(s.as_ref());
        }
        table
    }
}

/// Builds a table in first-seen order from a token stream.
pub fn build_vocab<I, S>(tokens: I) -> SymbolTable
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tokens.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Character,
    Syllable,
    Word,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" | "character" | "chars" => Ok(Domain::Character),
            "syl" | "syllable" | "pinyin" => Ok(Domain::Syllable),
            "word" | "words" => Ok(Domain::Word),
            other => Err(Error::Config(format!("unknown domain {other:?}"))),
        }
    }
}

/// Splits one corpus line into tokens according to the domain's file format:
/// character corpora are one token per non-whitespace code point, syllable
/// and word corpora are whitespace separated.
pub fn tokenize(domain: Domain, line: &str) -> Vec<&str> {
    match domain {
        Domain::Character => line
            .char_indices()
            .filter(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| &line[i..i + c.len_utf8()])
            .collect(),
        Domain::Syllable | Domain::Word => line.split_whitespace().collect(),
    }
}

/// Integer-coded corpus with line structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    domain: Domain,
    ids: Vec<SymbolId>,
    // exclusive end offset of each line
    line_ends: Vec<usize>,
}

impl TokenStream {
    pub fn new(domain: Domain) -> Self {
        Self {
            domain,
            ids: Vec::new(),
            line_ends: Vec::new(),
        }
    }

    /// A single-line stream.
    pub fn from_ids(domain: Domain, ids: Vec<SymbolId>) -> Self {
        let end = ids.len();
        Self {
            domain,
            ids,
            line_ends: vec![end],
        }
    }

    /// Tokenizes and interns text lines. Empty lines are kept as empty segments.
    pub fn from_text<'a, I>(domain: Domain, lines: I, table: &mut SymbolTable) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut stream = TokenStream::new(domain);
        for line in lines {
            let ids: Vec<_> = tokenize(domain, line)
                .into_iter()
                .map(|t| table.intern(t))
                .collect();
            stream.push_line(&ids);
        }
        stream
    }

    /// Tokenizes against a fixed table; unknown tokens are an error.
    pub fn from_text_fixed<'a, I>(domain: Domain, lines: I, table: &SymbolTable) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut stream = TokenStream::new(domain);
        for line in lines {
            let mut ids = Vec::new();
            for tok in tokenize(domain, line) {
                ids.push(table.get(tok).ok_or_else(|| Error::UnknownSymbol {
                    symbol: tok.to_owned(),
                    table: "token stream vocabulary",
                })?);
            }
            stream.push_line(&ids);
        }
        Ok(stream)
    }

    pub fn push_line(&mut self, ids: &[SymbolId]) {
        self.ids.extend_from_slice(ids);
        self.line_ends.push(self.ids.len());
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn ids(&self) -> &[SymbolId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_lines(&self) -> usize {
        self.line_ends.len()
    }

    pub fn lines(&self) -> impl Iterator<Item = &[SymbolId]> + '_ {
        let mut start = 0;
        self.line_ends.iter().map(move |&end| {
            let line = &self.ids[start..end];
            start = end;
            line
        })
    }

    /// Checks that every id is below `vocab_size`.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(Error::UnknownSymbol {
                symbol: id.to_string(),
                table: "token stream vocabulary",
            }),
            None => Ok(()),
        }
    }
}

/// Sparse n-gram count table of a single order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramCounts {
    order: usize,
    table: HashMap<Vec<SymbolId>, u64>,
    total: u64,
}

impl NgramCounts {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        Self {
            order,
            table: HashMap::new(),
            total: 0,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Total count mass.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct n-grams.
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn add(&mut self, ngram: &[SymbolId], count: u64) {
        assert_eq!(ngram.len(), self.order, "n-gram length does not match order");
        if count == 0 {
            return;
        }
        *self.table.entry(ngram.to_vec()).or_insert(0) += count;
        self.total += count;
    }

    pub fn get(&self, ngram: &[SymbolId]) -> u64 {
        self.table.get(ngram).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[SymbolId], u64)> + '_ {
        self.table.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    /// Associative merge.
    pub fn merge(&mut self, other: &NgramCounts) {
        assert_eq!(self.order, other.order);
        for (k, v) in other.iter() {
            self.add(k, v);
        }
    }

    /// Drops every n-gram whose count is below `min_count`.
    pub fn pruned(&self, min_count: u64) -> NgramCounts {
        let mut out = NgramCounts::new(self.order);
        for (k, v) in self.iter().filter(|&(_, v)| v >= min_count) {
            out.add(k, v);
        }
        out
    }

    /// All entries sorted by descending count, ties by ascending id tuple.
    pub fn sorted(&self) -> Vec<(Vec<SymbolId>, u64)> {
        let mut all: Vec<_> = self.table.iter().map(|(k, &v)| (k.clone(), v)).collect();
        all.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all
    }

    /// TSV rendering: `tok1 tok2 …<TAB>count`, in [`sorted`](Self::sorted) order.
    pub fn to_tsv(&self, table: &SymbolTable) -> String {
        let mut out = String::new();
        for (ngram, count) in self.sorted() {
            let _ = writeln!(out, "{}\t{}", table.render(&ngram), count);
        }
        out
    }
}

/// Counts sliding windows of one contiguous slice.
pub fn count_windows(ids: &[SymbolId], n: usize) -> NgramCounts {
    let mut counts = NgramCounts::new(n);
    if ids.len() >= n {
        for w in ids.windows(n) {
            counts.add(w, 1);
        }
    }
    counts
}

/// Exact per-line sliding-window counts of order `n`.
pub fn count_ngrams(stream: &TokenStream, n: usize) -> Result<NgramCounts> {
    if n == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    let mut counts = NgramCounts::new(n);
    for line in stream.lines() {
        if line.len() >= n {
            for w in line.windows(n) {
                counts.add(w, 1);
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::CorpusTooShort {
            tokens: stream.len(),
            order: n,
        });
    }
    Ok(counts)
}

/// Like [`count_ngrams`] but each line is left-padded with `n - 1` copies of
/// [`BOS`], so that line-initial tokens get a start context.
pub fn count_ngrams_padded(stream: &TokenStream, n: usize) -> Result<NgramCounts> {
    if n == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    let mut counts = NgramCounts::new(n);
    let mut buf = Vec::new();
    for line in stream.lines().filter(|l| !l.is_empty()) {
        buf.clear();
        buf.resize(n - 1, BOS);
        buf.extend_from_slice(line);
        for w in buf.windows(n) {
            counts.add(w, 1);
        }
    }
    if counts.is_empty() {
        return Err(Error::CorpusTooShort {
            tokens: stream.len(),
            order: n,
        });
    }
    Ok(counts)
}

/// Parallel [`count_ngrams`]: lines are sharded and the partial tables merged.
/// The result equals the sequential count exactly.
pub fn count_ngrams_par(stream: &TokenStream, n: usize) -> Result<NgramCounts> {
    if n == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    let lines: Vec<&[SymbolId]> = stream.lines().collect();
    let counts = lines
        .par_chunks(1024)
        .map(|chunk| {
            let mut c = NgramCounts::new(n);
            for line in chunk {
                if line.len() >= n {
                    for w in line.windows(n) {
                        c.add(w, 1);
                    }
                }
            }
            c
        })
        .reduce(
            || NgramCounts::new(n),
            |mut a, b| {
                a.merge(&b);
                a
            },
        );
    if counts.is_empty() {
        return Err(Error::CorpusTooShort {
            tokens: stream.len(),
            order: n,
        });
    }
    Ok(counts)
}

/// The `k` most frequent n-grams, ties broken by lexicographic id order.
pub fn top_k(counts: &NgramCounts, k: usize) -> Vec<(Vec<SymbolId>, u64)> {
    let mut all = counts.sorted();
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocab_is_first_seen_and_deduplicated() {
        let t = build_vocab(["中", "国", "中"]);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("中"), Some(0));
        assert_eq!(t.get("国"), Some(1));
        assert!(build_vocab(Vec::<String>::new()).is_empty());
    }

    #[test]
    fn bigram_counts_by_hand() {
        let mut t = SymbolTable::new();
        let s = TokenStream::from_text(Domain::Syllable, ["a b a b a"], &mut t);
        let c = count_ngrams(&s, 2).unwrap();
        let (a, b) = (t.get("a").unwrap(), t.get("b").unwrap());
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&[a, b]), 2);
        assert_eq!(c.get(&[b, a]), 2);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn windows_do_not_cross_lines() {
        let mut t = SymbolTable::new();
        let s = TokenStream::from_text(Domain::Character, ["ab", "ba"], &mut t);
        let c = count_ngrams(&s, 2).unwrap();
        assert_eq!(c.total(), 2);
        assert_eq!(c.get(&[1, 1]), 0);
    }

    #[test]
    fn short_corpus_is_an_error() {
        let mut t = SymbolTable::new();
        let s = TokenStream::from_text(Domain::Syllable, ["a b", "c"], &mut t);
        assert!(matches!(
            count_ngrams(&s, 3),
            Err(Error::CorpusTooShort { order: 3, .. })
        ));
    }

    #[test]
    fn character_tokenizer_skips_whitespace() {
        assert_eq!(tokenize(Domain::Character, "中 国\t人"), vec!["中", "国", "人"]);
    }

    #[test]
    fn padded_counts_add_start_context() {
        let mut t = SymbolTable::new();
        let s = TokenStream::from_text(Domain::Syllable, ["a b"], &mut t);
        let c = count_ngrams_padded(&s, 2).unwrap();
        assert_eq!(c.get(&[BOS, 0]), 1);
        assert_eq!(c.get(&[0, 1]), 1);
        assert_eq!(c.total(), 2);
    }

    #[test]
    fn top_k_examples() {
        let mut c = NgramCounts::new(1);
        c.add(&[7], 5);
        c.add(&[3], 3);
        assert_eq!(top_k(&c, 1), vec![(vec![7], 5)]);
        assert_eq!(top_k(&c, 10), vec![(vec![7], 5), (vec![3], 3)]);

        let mut tie = NgramCounts::new(1);
        tie.add(&[1], 2); // "b"
        tie.add(&[0], 2); // "a"
        assert_eq!(top_k(&tie, 1), vec![(vec![0], 2)]);
    }

    fn lines_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..6, 0..30), 1..20)
    }

    proptest! {
        #[test]
        fn window_mass_is_length_minus_order(ids in prop::collection::vec(0u32..5, 3..200), n in 1usize..4) {
            let s = TokenStream::from_ids(Domain::Syllable, ids.clone());
            let c = count_ngrams(&s, n).unwrap();
            prop_assert_eq!(c.total() as usize, ids.len() + 1 - n);
            prop_assert!(c.iter().all(|(_, v)| v >= 1));
        }

        #[test]
        fn chunked_counting_with_overlap_matches_single_pass(
            ids in prop::collection::vec(0u32..4, 1..300),
            n in 1usize..4,
            chunk in 1usize..50,
        ) {
            let whole = count_windows(&ids, n);
            let mut merged = NgramCounts::new(n);
            let mut start = 0;
            while start < ids.len() {
                let end = (start + chunk + n - 1).min(ids.len());
                merged.merge(&count_windows(&ids[start..end], n));
                start += chunk;
            }
            prop_assert_eq!(whole, merged);
        }

        #[test]
        fn parallel_counting_is_identical(lines in lines_strategy(), n in 1usize..4) {
            let mut s = TokenStream::new(Domain::Syllable);
            for l in &lines {
                s.push_line(l);
            }
            let a = count_ngrams(&s, n);
            let b = count_ngrams_par(&s, n);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "sequential and parallel disagree on error"),
            }
        }

        #[test]
        fn top_k_is_prefix_of_full_sort(ids in prop::collection::vec(0u32..5, 2..100), k in 1usize..30) {
            let c = count_windows(&ids, 2);
            let full = c.sorted();
            let top = top_k(&c, k);
            prop_assert_eq!(top.len(), k.min(full.len()));
            prop_assert_eq!(&full[..top.len()], &top[..]);
        }

        #[test]
        fn interning_is_a_bijection(tokens in prop::collection::vec("[a-e]{1,3}", 0..50)) {
            let t = build_vocab(&tokens);
            for (id, s) in t.iter() {
                prop_assert_eq!(t.get(s), Some(id));
            }
            for tok in &tokens {
                prop_assert_eq!(t.lookup(t.get(tok).unwrap()), Some(tok.as_str()));
            }
        }
    }
}
