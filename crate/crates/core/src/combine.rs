//! Agreement between the EM and vector methods, and feeding the agreed
//! pairs back into both.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::channel::{em_train_restarts, resolve_hints, EmConfig, EmProblem, EmRun};
use crate::decoder::{DecodeConfig, Decoder};
use crate::embed::{train_embeddings, EmbedConfig, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::lm::{train_lm, NgramLM, Smoothing};
use crate::symbols::{count_ngrams_padded, Domain, SymbolTable, TokenStream};
use crate::vecmap::{map_words, project_to_characters, self_learn_map, MapResult, MapWordsConfig, VecmapConfig, WordPronTable};

/// Character → toneless syllable, at most one syllable per character.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfidentPairs {
    pairs: BTreeMap<String, (String, String)>,
}

impl ConfidentPairs {
    /// Adds a pair; re-adding the same pair is a no-op, a conflicting
    /// syllable is an error.
    pub fn insert(&mut self, c: &str, syllable: &str, provenance: &str) -> Result<()> {
        match self.pairs.get(c) {
            Some((s, _)) if s == syllable => Ok(()),
            Some((s, _)) => Err(Error::Config(format!("character {c} already paired with {s}, not {syllable}"))),
            None => {
                self.pairs.insert(c.to_owned(), (syllable.to_owned(), provenance.to_owned()));
                Ok(())
            }
        }
    }

    pub fn get(&self, c: &str) -> Option<&str> {
        self.pairs.get(c).map(|(s, _)| s.as_str())
    }

    pub fn provenance(&self, c: &str) -> Option<&str> {
        self.pairs.get(c).map(|(_, p)| p.as_str())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.pairs.iter().map(|(c, (s, _))| (c.as_str(), s.as_str()))
    }

    pub fn to_vec(&self) -> Vec<(String, String)> {
        self.iter().map(|(c, s)| (c.to_owned(), s.to_owned())).collect()
    }

    /// `char<TAB>syllable` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (c, s) in self.iter() {
            let _ = writeln!(out, "{c}\t{s}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut p = ConfidentPairs::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 2 {
                return Err(Error::parse("hints file", i + 1, "expected `char<TAB>syllable`"));
            }
            p.insert(f[0], f[1].trim(), "file")
                .map_err(|e| Error::parse("hints file", i + 1, e.to_string()))?;
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vote {
    pub syllable: String,
    /// Tokens that voted for `syllable`.
    pub support: usize,
    /// Tokens of the character.
    pub total: usize,
}

/// Majority reading per character over an aligned token sample; ties go to
/// the smaller syllable.
pub fn majority_votes(chars: &[String], readings: &[String]) -> Result<BTreeMap<String, Vote>> {
    if chars.len() != readings.len() {
        return Err(Error::LengthMismatch(chars.len(), readings.len()));
    }
    let mut counts: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    for (c, s) in chars.iter().zip(readings) {
        *counts.entry(c).or_default().entry(s).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(c, m)| {
            let total = m.values().sum();
            let (s, n) = m
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
                .expect("non-empty");
            (
                c.to_owned(),
                Vote {
                    syllable: s.to_owned(),
                    support: n,
                    total,
                },
            )
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgreementStats {
    /// Characters voted on by both methods.
    pub types_compared: usize,
    pub types_agreed: usize,
    /// Tokens of the compared characters (from the EM sample).
    pub tokens_compared: usize,
    pub tokens_agreed: usize,
}

impl AgreementStats {
    pub fn type_rate(&self) -> f64 {
        self.types_agreed as f64 / self.types_compared.max(1) as f64
    }

    pub fn token_rate(&self) -> f64 {
        self.tokens_agreed as f64 / self.tokens_compared.max(1) as f64
    }
}

/// Keeps the characters whose two votes name the same syllable. Characters
/// missing from either side are left out.
pub fn distill_agreements(
    em: &BTreeMap<String, Vote>,
    vector: &BTreeMap<String, Vote>,
) -> (ConfidentPairs, AgreementStats) {
    let mut pairs = ConfidentPairs::default();
    let mut stats = AgreementStats::default();
    for (c, a) in em {
        let Some(b) = vector.get(c) else { continue };
        stats.types_compared += 1;
        stats.tokens_compared += a.total;
        if a.syllable == b.syllable {
            stats.types_agreed += 1;
            stats.tokens_agreed += a.total;
            pairs.insert(c, &a.syllable, "em+vector").expect("one vote per character");
        }
    }
    (pairs, stats)
}

/// Corpora for a combined run. Written and spoken corpora are given both
/// unsegmented (for EM) and segmented into words (for the vector method);
/// both views must cover the same lines.
#[derive(Clone, Copy, Debug)]
pub struct CombinedInputs<'a> {
    pub char_lines: &'a [String],
    pub char_words: &'a [Vec<String>],
    /// Toneless syllables separated by spaces.
    pub syllable_lines: &'a [String],
    pub syllable_words: &'a [Vec<String>],
    /// Segmented test text.
    pub test_words: &'a [Vec<String>],
}

#[derive(Clone, Debug)]
pub struct CombinedConfig {
    pub em: EmConfig,
    pub decode: DecodeConfig,
    pub lm_smoothing: Smoothing,
    pub embed: EmbedConfig,
    pub vecmap: VecmapConfig,
    pub map: MapWordsConfig,
    /// Characters of the training corpus decoded to collect votes.
    pub held_in_chars: usize,
}

impl Default for CombinedConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            decode: DecodeConfig::default(),
            lm_smoothing: Smoothing::default(),
            embed: EmbedConfig::default(),
            vecmap: VecmapConfig::default(),
            map: MapWordsConfig::default(),
            held_in_chars: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CombinedOutput {
    pub em: EmRun,
    pub em_hinted: EmRun,
    pub mapping: MapResult,
    pub table: WordPronTable,
    pub table_constrained: WordPronTable,
    pub em_votes: BTreeMap<String, Vote>,
    pub vector_votes: BTreeMap<String, Vote>,
    pub pairs: ConfidentPairs,
    pub stats: AgreementStats,
    /// Per-character test pronunciations (flattened over lines).
    pub test_em: Vec<String>,
    pub test_em_hinted: Vec<String>,
    pub test_vector: Vec<String>,
    pub test_final: Vec<String>,
    pub warnings: Vec<String>,
}

/// Shared state for one set of corpora: vocabularies, streams and the
/// decoding language model.
pub struct Corpora {
    pub chars: SymbolTable,
    pub char_stream: TokenStream,
    pub syllables: SymbolTable,
    pub syllable_stream: TokenStream,
    pub bigram: NgramLM,
}

impl Corpora {
    pub fn new(char_lines: &[String], syllable_lines: &[String], smoothing: Smoothing) -> Result<Self> {
        let mut chars = SymbolTable::new();
        let char_stream = TokenStream::from_text(Domain::Character, char_lines.iter().map(String::as_str), &mut chars);
        let mut syllables = SymbolTable::new();
        let syllable_stream =
            TokenStream::from_text(Domain::Syllable, syllable_lines.iter().map(String::as_str), &mut syllables);
        let bigram = train_lm(&count_ngrams_padded(&syllable_stream, 2)?, &syllables, smoothing)?;
        Ok(Self {
            chars,
            char_stream,
            syllables,
            syllable_stream,
            bigram,
        })
    }

    pub fn problem(&self, cfg: &EmConfig) -> Result<EmProblem> {
        EmProblem::from_streams(&self.char_stream, &self.chars, &self.syllable_stream, &self.syllables, cfg)
    }

    /// Viterbi readings of each line, flattened.
    pub fn decode(&self, run: &EmRun, lines: &[String], cfg: DecodeConfig) -> Result<Vec<String>> {
        let dec = Decoder::new(&self.bigram, &run.channel, cfg)?;
        let mut out = Vec::new();
        for l in lines {
            let d = dec.viterbi(&dec.encode_line(l));
            out.extend(d.syllables.iter().map(|&p| self.bigram.vocab().resolve(p).to_owned()));
        }
        Ok(out)
    }

    /// Decoder score of a given reading of `lines` (unknown syllables make
    /// the score `-inf`).
    pub fn score(&self, run: &EmRun, lines: &[String], readings: &[String], cfg: DecodeConfig) -> Result<f64> {
        let dec = Decoder::new(&self.bigram, &run.channel, cfg)?;
        let mut total = 0.0;
        let mut pos = 0;
        for l in lines {
            let chars = dec.encode_line(l);
            let n = chars.len();
            let Some(states) = readings
                .get(pos..pos + n)
                .and_then(|r| r.iter().map(|s| self.bigram.vocab().get(s)).collect::<Option<Vec<_>>>())
            else {
                return Ok(f64::NEG_INFINITY);
            };
            total += dec.score(&chars, &states);
            pos += n;
        }
        Ok(total)
    }
}

/// Number of leading lines that make up the held-in sample: lines are
/// taken until at least `budget` characters are covered.
pub fn held_in_lines(lines: &[String], budget: usize) -> usize {
    let mut held = 0;
    let mut n = 0;
    for l in lines {
        if held >= budget {
            break;
        }
        held += l.chars().filter(|c| !c.is_whitespace()).count();
        n += 1;
    }
    n
}

fn flatten(lines: &[Vec<String>]) -> Vec<String> {
    lines.iter().flatten().cloned().collect()
}

pub fn line_chars(lines: &[String]) -> Vec<String> {
    lines.iter().flat_map(|l| l.chars().filter(|c| !c.is_whitespace()).map(String::from)).collect()
}

/// Word embeddings of a segmented corpus, standardized (unit length,
/// centered, unit length).
pub fn embed_words(lines: &[Vec<String>], cfg: &EmbedConfig) -> Result<EmbeddingMatrix> {
    let mut vocab = SymbolTable::new();
    let text: Vec<String> = lines.iter().map(|l| l.join(" ")).collect();
    let stream = TokenStream::from_text(Domain::Word, text.iter().map(String::as_str), &mut vocab);
    let mut m = train_embeddings(&stream, &vocab, cfg)?;
    m.standardize();
    Ok(m)
}

/// Both methods run independently, with per-character votes over the
/// held-in sample and the agreed pairs.
#[derive(Clone, Debug)]
pub struct FirstRound {
    pub em: EmRun,
    pub mapping: MapResult,
    pub table: WordPronTable,
    pub em_votes: BTreeMap<String, Vote>,
    pub vector_votes: BTreeMap<String, Vote>,
    pub pairs: ConfidentPairs,
    pub stats: AgreementStats,
    pub warnings: Vec<String>,
    written: EmbeddingMatrix,
    spoken: EmbeddingMatrix,
}

/// Runs EM and the vector method side by side and distills their
/// agreements, without the second round.
pub fn first_round(inputs: &CombinedInputs<'_>, cfg: &CombinedConfig) -> Result<FirstRound> {
    let corpora = Corpora::new(inputs.char_lines, inputs.syllable_lines, cfg.lm_smoothing)?;
    first_round_with(&corpora, &corpora.problem(&cfg.em)?, inputs, cfg)
}

fn first_round_with(corpora: &Corpora, problem: &EmProblem, inputs: &CombinedInputs<'_>, cfg: &CombinedConfig) -> Result<FirstRound> {
    if inputs.char_lines.len() != inputs.char_words.len() {
        return Err(Error::LengthMismatch(inputs.char_lines.len(), inputs.char_words.len()));
    }
    let mut warnings = Vec::new();
    let (runs, best) = em_train_restarts(problem, &cfg.em, None)?;
    let em = runs.into_iter().nth(best).expect("best restart exists");

    let held_lines = held_in_lines(inputs.char_lines, cfg.held_in_chars);
    let sample = &inputs.char_lines[..held_lines];
    let sample_chars = line_chars(sample);
    let em_readings = corpora.decode(&em, sample, cfg.decode)?;
    let em_votes = majority_votes(&sample_chars, &em_readings)?;

    let written = embed_words(inputs.char_words, &cfg.embed)?;
    let spoken = embed_words(inputs.syllable_words, &cfg.embed)?;
    let mapping = self_learn_map(&written, &spoken, &cfg.vecmap)?;
    warnings.extend(mapping.warnings.iter().cloned());
    let none = ConfidentPairs::default();
    let table = map_words(&written, &spoken, &mapping.mapping, &none, &cfg.map)?;
    let vec_readings = flatten(&project_to_characters(&table, &inputs.char_words[..held_lines], &none, &cfg.map)?);
    let vector_votes = majority_votes(&sample_chars, &vec_readings)?;

    let (pairs, stats) = distill_agreements(&em_votes, &vector_votes);
    log::info!(
        "agreement: {}/{} types, {}/{} tokens",
        stats.types_agreed,
        stats.types_compared,
        stats.tokens_agreed,
        stats.tokens_compared
    );
    Ok(FirstRound {
        em,
        mapping,
        table,
        em_votes,
        vector_votes,
        pairs,
        stats,
        warnings,
        written,
        spoken,
    })
}

/// The two methods, one round of agreement, and the reruns with the agreed
/// pairs as EM hints and vector constraints.
pub fn run_combined(inputs: CombinedInputs<'_>, cfg: &CombinedConfig) -> Result<CombinedOutput> {
    let corpora = Corpora::new(inputs.char_lines, inputs.syllable_lines, cfg.lm_smoothing)?;
    let problem = corpora.problem(&cfg.em)?;
    let first = first_round_with(&corpora, &problem, &inputs, cfg)?;
    let FirstRound {
        em,
        mapping,
        table,
        em_votes,
        vector_votes,
        pairs,
        stats,
        mut warnings,
        written,
        spoken,
    } = first;
    let none = ConfidentPairs::default();

    let test_lines: Vec<String> = inputs.test_words.iter().map(|w| w.concat()).collect();
    let test_em = corpora.decode(&em, &test_lines, cfg.decode)?;
    let test_vector = flatten(&project_to_characters(&table, inputs.test_words, &none, &cfg.map)?);

    let hints: Vec<(String, String)> = pairs
        .iter()
        .filter(|(c, s)| corpora.chars.get(c).is_some() && corpora.syllables.get(s).is_some())
        .map(|(c, s)| (c.to_owned(), s.to_owned()))
        .collect();
    let hinted_cfg = EmConfig {
        hints: resolve_hints(&hints, &corpora.chars, &corpora.syllables)?,
        ..cfg.em.clone()
    };
    let (runs, best) = em_train_restarts(&problem, &hinted_cfg, None)?;
    let em_hinted = runs.into_iter().nth(best).expect("best restart exists");
    let test_em_hinted = corpora.decode(&em_hinted, &test_lines, cfg.decode)?;

    let table_constrained = map_words(&written, &spoken, &mapping.mapping, &pairs, &cfg.map)?;
    let test_final = if pairs.is_empty() {
        let msg = "no agreed pairs; choosing the single method whose test reading scores higher under the EM model";
        log::warn!("{msg}");
        warnings.push(msg.to_owned());
        let s_em = corpora.score(&em, &test_lines, &test_em, cfg.decode)?;
        let s_vec = corpora.score(&em, &test_lines, &test_vector, cfg.decode)?;
        if s_vec > s_em {
            test_vector.clone()
        } else {
            test_em.clone()
        }
    } else {
        flatten(&project_to_characters(&table_constrained, inputs.test_words, &pairs, &cfg.map)?)
    };

    Ok(CombinedOutput {
        em,
        em_hinted,
        mapping,
        table,
        table_constrained,
        em_votes,
        vector_votes,
        pairs,
        stats,
        test_em,
        test_em_hinted,
        test_vector,
        test_final,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(list: &[(&str, &str, usize)]) -> BTreeMap<String, Vote> {
        list.iter()
            .map(|&(c, s, n)| {
                (
                    c.to_string(),
                    Vote {
                        syllable: s.into(),
                        support: n,
                        total: n,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn agreement_keeps_only_equal_votes() {
        let em = v(&[("要", "yao", 10), ("重", "zhong", 4), ("的", "de", 30)]);
        let vec = v(&[("要", "yao", 9), ("重", "chong", 4), ("好", "hao", 2)]);
        let (pairs, stats) = distill_agreements(&em, &vec);
        assert_eq!(pairs.get("要"), Some("yao"));
        assert_eq!(pairs.get("重"), None);
        assert_eq!(pairs.len(), 1);
        assert_eq!(stats.types_compared, 2);
        assert_eq!(stats.types_agreed, 1);
        assert_eq!((stats.tokens_agreed, stats.tokens_compared), (10, 14));
    }

    #[test]
    fn pairs_are_functional() {
        let mut p = ConfidentPairs::default();
        p.insert("要", "yao", "a").unwrap();
        p.insert("要", "yao", "b").unwrap();
        assert!(p.insert("要", "yue", "c").is_err());
        assert_eq!(p.provenance("要"), Some("a"));
        let back = ConfidentPairs::from_tsv(&p.to_tsv()).unwrap();
        assert_eq!(back.to_vec(), p.to_vec());
        assert!(ConfidentPairs::from_tsv("要\tyao\n要\tyue\n").is_err());
    }

    #[test]
    fn majority_vote_breaks_ties_to_smaller_syllable() {
        let c: Vec<String> = ["了", "了", "了", "了", "好"].iter().map(|s| s.to_string()).collect();
        let r: Vec<String> = ["liao", "le", "le", "liao", "hao"].iter().map(|s| s.to_string()).collect();
        let votes = majority_votes(&c, &r).unwrap();
        assert_eq!(votes["了"], Vote { syllable: "le".into(), support: 2, total: 4 });
        assert!(majority_votes(&c, &r[..2]).is_err());
    }
}
