//! Greedy left-to-right longest-match conversion of character text into
//! syllables using a pronunciation dictionary.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phonology::Syllable;

#[derive(Clone, Debug, Default)]
pub struct PronDictionary {
    entries: Vec<(String, Vec<Syllable>)>,
    index: HashMap<String, usize>,
    max_chars: usize,
    skipped: usize,
}

impl PronDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry. Returns `false` (and keeps the earlier entry) for a
    /// duplicate word; errors when the syllable count differs from the
    /// character count.
    pub fn insert(&mut self, word: &str, pron: Vec<Syllable>) -> Result<bool> {
        let n = word.chars().count();
        if n == 0 || n != pron.len() {
            return Err(Error::LengthMismatch(n, pron.len()));
        }
        if self.index.contains_key(word) {
            return Ok(false);
        }
        self.index.insert(word.to_owned(), self.entries.len());
        self.entries.push((word.to_owned(), pron));
        self.max_chars = self.max_chars.max(n);
        Ok(true)
    }

    /// Parses `word<TAB>syl1 syl2 …` lines. Entries whose syllable count does
    /// not match the character count are skipped and counted in
    /// [`skipped`](Self::skipped); unparseable syllables are an error.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut dict = PronDictionary::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, pron) = line.split_once('\t').ok_or_else(|| {
                Error::parse("dictionary", lineno + 1, "expected word<TAB>pronunciation")
            })?;
            let pron = pron
                .split_whitespace()
                .map(Syllable::parse)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::parse("dictionary", lineno + 1, e.to_string()))?;
            if dict.insert(word.trim(), pron).is_err() {
                dict.skipped += 1;
            }
        }
        if dict.is_empty() {
            return Err(Error::Empty("pronunciation dictionary"));
        }
        Ok(dict)
    }

    pub fn get(&self, word: &str) -> Option<&[Syllable]> {
        self.index.get(word).map(|&i| self.entries[i].1.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[Syllable])> + '_ {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Longest dictionary word starting at `chars[start]`, in characters.
    fn longest_match(&self, chars: &[char], start: usize) -> Option<(usize, &[Syllable])> {
        let limit = self.max_chars.min(chars.len() - start);
        let mut key = String::new();
        for len in (1..=limit).rev() {
            key.clear();
            key.extend(&chars[start..start + len]);
            if let Some(p) = self.get(&key) {
                return Some((len, p));
            }
        }
        None
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pinyinized {
    pub syllables: Vec<Syllable>,
    /// Characters covered by a dictionary match.
    pub matched: usize,
    /// Non-whitespace characters in the input.
    pub total: usize,
}

impl Pinyinized {
    pub fn coverage(&self) -> f64 {
        coverage(self.matched, self.total)
    }

    pub fn render(&self, strip_tones: bool) -> String {
        let parts: Vec<String> = self
            .syllables
            .iter()
            .map(|s| {
                if strip_tones {
                    s.base().to_owned()
                } else {
                    s.numeric()
                }
            })
            .collect();
        parts.join(" ")
    }
}

fn coverage(matched: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    }
}

/// Converts one line. Unmatched characters are dropped.
pub fn pinyinize(text: &str, dict: &PronDictionary) -> Pinyinized {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut out = Pinyinized {
        total: chars.len(),
        ..Default::default()
    };
    let mut i = 0;
    while i < chars.len() {
        match dict.longest_match(&chars, i) {
            Some((len, pron)) => {
                out.syllables.extend_from_slice(pron);
                out.matched += len;
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Converts many lines in parallel, preserving order. Returns per-line
/// results and the overall coverage ratio.
pub fn pinyinize_lines<S: AsRef<str> + Sync>(
    lines: &[S],
    dict: &PronDictionary,
) -> (Vec<Pinyinized>, f64) {
    let out: Vec<Pinyinized> = lines
        .par_iter()
        .map(|l| pinyinize(l.as_ref(), dict))
        .collect();
    let matched = out.iter().map(|p| p.matched).sum();
    let total = out.iter().map(|p| p.total).sum();
    (out, coverage(matched, total))
}
