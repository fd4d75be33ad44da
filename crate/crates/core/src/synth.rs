//! Synthetic writing systems with known pronunciations.
//!
//! A hidden lexicon of words (syllable sequences with fixed spellings) and
//! a word-level bigram model generate sentences. One independent sample is
//! written out as characters, another as syllables, so the two corpora share
//! statistics but are not parallel. A held-out character slice keeps its gold
//! readings for scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use crate::error::{Error, Result};
use crate::phonology::{DecompositionTable, Syllable};

/// Common Mandarin syllables, most frequent first.
const SYLLABLES: &[&str] = &[
    "de", "shi", "yi", "bu", "you", "zhi", "le", "ren", "guo", "zai", "ta", "wo", "zhong", "he", "da",
    "ri", "lai", "shang", "wei", "men", "dao", "sheng", "ge", "xue", "hui", "jia", "ke", "nian", "chu",
    "dui", "fa", "cheng", "xing", "fang", "zi", "hou", "jing", "ye", "hao", "xian", "zuo", "gong",
    "dong", "qi", "li", "mian", "bian", "kan", "ming", "dian", "tian", "xin", "qian", "gao", "ben",
    "zhe", "na", "tong", "yuan", "san", "duo", "shou", "ji", "yong", "xiang", "neng", "ci", "wen",
    "hua", "yao", "jiu", "mei", "chang", "liang", "fen", "qing", "lu", "nan", "bei", "shui", "jiao",
    "jue", "pai", "fei", "mao", "zhang", "dang", "pin", "si", "wu", "ba", "ma", "ni", "ai", "an",
    "ang", "ao", "bao", "bing", "cai", "cong", "cun", "dai", "deng", "du", "er", "feng", "fu", "gai",
    "gan", "gen", "gu", "gua", "guan", "hai", "han", "hen", "hong", "huan", "huo", "jian", "jin",
    "ju", "kai", "kou", "kuai", "lao", "leng", "lian", "lin", "long", "lv", "mai", "man", "mo", "mu",
    "nai", "nei", "nong", "nv", "pa", "pian", "ping", "po", "qiu", "qu", "quan", "ran", "rang", "rou",
    "ru", "sai", "sha", "shen", "shu", "song", "su", "suo", "tai", "tan", "tou", "tu", "wai", "wan",
    "wang", "xi", "xia", "xiao", "xie", "xu", "ya", "yan", "yang", "yin", "ying", "yu", "yue", "zao",
    "zhan", "zhao", "zhen", "zheng", "zhu", "zhuang", "zou", "zu", "zui",
];

const CJK_BASE: u32 = 0x4E00;
const COMPONENT_BASE: u32 = 0x4E00 + 0x3000;

/// Where the hidden sentences come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LmSource {
    /// A random syllable trigram model: every history draws its successor
    /// distribution from a Dirichlet with this total concentration around a
    /// Zipf-shaped base. Characters are chosen per token, so heteronyms are
    /// context-free mixtures and every word is one character long.
    Trigram { concentration: f64 },
    /// A hidden word lexicon with fixed spellings and a word bigram model.
    /// Heteronym readings depend on the word they occur in.
    Words,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub source: LmSource,
    pub syllables: usize,
    pub characters: usize,
    /// Gamma shape for distributing extra characters over syllables; small
    /// values concentrate them on a few syllables.
    pub fanout_concentration: f64,
    /// Fraction of character types with a second reading.
    pub heteronym_fraction: f64,
    /// Share of a heteronym's spellings that use its primary reading.
    pub heteronym_split: f64,
    /// Number of distinct tones drawn per (character, reading).
    pub tones: u8,
    /// Word-source settings from here to `bigram_weight`.
    pub words: usize,
    /// Zipf exponent of the word unigram distribution.
    pub zipf: f64,
    /// Successors per word in the hidden bigram model.
    pub successors: usize,
    /// Probability of following a word's own successors instead of the
    /// class transition.
    pub bigram_weight: f64,
    /// Latent word classes; the next word's class follows a sparse
    /// class-to-class transition table.
    pub word_classes: usize,
    /// Dirichlet concentration of each class transition row.
    pub class_concentration: f64,
    pub char_tokens: usize,
    pub syllable_tokens: usize,
    pub test_tokens: usize,
    /// Every character type must occur at least this often in the character
    /// corpus; generation fails otherwise.
    pub min_count: usize,
    /// Probability that a character's second component is shared by the
    /// other characters of its primary reading. Zero disables components.
    pub phonetic_components: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            source: LmSource::Trigram { concentration: 5.0 },
            syllables: 50,
            characters: 200,
            fanout_concentration: 1.0,
            heteronym_fraction: 0.05,
            heteronym_split: 0.6,
            tones: 5,
            words: 400,
            zipf: 1.0,
            successors: 8,
            bigram_weight: 0.5,
            word_classes: 50,
            class_concentration: 0.1,
            char_tokens: 200_000,
            syllable_tokens: 200_000,
            test_tokens: 2_000,
            min_count: 5,
            phonetic_components: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.syllables == 0 || self.characters == 0 || self.words == 0 {
            return bad("syllable, character and word counts must be at least 1");
        }
        if self.char_tokens == 0 || self.syllable_tokens == 0 || self.test_tokens == 0 {
            return bad("corpus sizes must be at least 1");
        }
        if self.syllables > SYLLABLES.len() {
            return bad("more syllable types requested than the built-in inventory holds");
        }
        if self.characters < self.syllables {
            return bad("need at least one character per syllable");
        }
        if self.characters > 0x3000 {
            return bad("too many character types");
        }
        let n_het = (self.heteronym_fraction * self.characters as f64).round() as usize;
        if !(0.0..=1.0).contains(&self.heteronym_fraction) || (n_het > 0 && self.syllables < 2) {
            return bad("heteronym fraction must be in [0, 1] and needs at least two syllables");
        }
        if !(0.0..1.0).contains(&self.heteronym_split) || self.heteronym_split <= 0.0 {
            return bad("heteronym split must be in (0, 1)");
        }
        if self.tones == 0 || self.tones > 5 {
            return bad("tone count must be in 1..=5");
        }
        if let LmSource::Trigram { concentration } = self.source {
            if !(concentration > 0.0 && concentration.is_finite()) {
                return bad("trigram concentration must be positive");
            }
        } else if self.words < self.characters + n_het {
            return bad("word lexicon too small to spell every character reading");
        }
        if self.fanout_concentration <= 0.0 || !(0.0..=1.0).contains(&self.bigram_weight) {
            return bad("fan-out concentration must be positive and bigram weight in [0, 1]");
        }
        if self.word_classes == 0 || !(self.class_concentration > 0.0 && self.class_concentration.is_finite()) {
            return bad("need at least one word class and a positive class concentration");
        }
        Ok(())
    }
}

/// A lexicon entry: characters and their readings, position by position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub chars: Vec<char>,
    pub readings: Vec<Syllable>,
}

impl Word {
    pub fn written(&self) -> String {
        self.chars.iter().collect()
    }

    /// Toneless syllables joined with `-`.
    pub fn spoken(&self) -> String {
        self.readings.iter().map(Syllable::base).collect::<Vec<_>>().join("-")
    }
}

/// A held-out slice with gold readings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestSet {
    pub lines: Vec<String>,
    /// Word segmentation of each line.
    pub words: Vec<Vec<String>>,
    pub gold: Vec<Vec<Syllable>>,
}

impl TestSet {
    pub fn num_tokens(&self) -> usize {
        self.gold.iter().map(Vec::len).sum()
    }

    pub fn chars(&self) -> Vec<String> {
        self.lines.iter().flat_map(|l| l.chars().map(String::from)).collect()
    }

    pub fn gold_flat(&self) -> Vec<Syllable> {
        self.gold.iter().flatten().cloned().collect()
    }
}

/// The hidden answer key: per-character reading distribution measured on
/// the generated character corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldMapping {
    pub readings: BTreeMap<char, Vec<(String, f64)>>,
}

impl GoldMapping {
    /// Most frequent toneless reading (ties to the lexicographically smaller).
    pub fn majority(&self, c: char) -> Option<&str> {
        self.readings.get(&c).and_then(|rs| {
            rs.iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|(s, _)| s.as_str())
        })
    }

    pub fn heteronym_fraction(&self) -> f64 {
        if self.readings.is_empty() {
            return 0.0;
        }
        let n = self.readings.values().filter(|r| r.len() > 1).count();
        n as f64 / self.readings.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    /// Toneless syllable inventory.
    pub syllables: Vec<String>,
    pub characters: Vec<char>,
    pub lexicon: Vec<Word>,
    /// Character corpus, one contiguous string per line.
    pub char_lines: Vec<String>,
    /// The same corpus segmented into written words.
    pub char_words: Vec<Vec<String>>,
    /// Gold readings of the character corpus (never shown to learners).
    pub char_gold: Vec<Vec<Syllable>>,
    /// Spoken corpus: tone-bearing syllables per line.
    pub syllable_lines: Vec<Vec<Syllable>>,
    /// Spoken corpus segmented into spoken words (`zhong-yao`).
    pub syllable_words: Vec<Vec<String>>,
    pub test: TestSet,
    pub gold: GoldMapping,
    pub decomposition: DecompositionTable,
}

fn gamma_weights(rng: &mut ChaCha8Rng, n: usize, shape: f64) -> Vec<f64> {
    let g = Gamma::new(shape, 1.0).expect("positive shape");
    let mut w: Vec<f64> = (0..n).map(|_| g.sample(rng).max(1e-12)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct Sampler<'a> {
    lexicon: &'a [Word],
    unigram: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    bigram_weight: f64,
    class_of: Vec<usize>,
    transitions: Vec<WeightedIndex<f64>>,
    members: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl Sampler<'_> {
    /// Sentences until `tokens` syllables are emitted; the last sentence is
    /// truncated to hit the budget exactly.
    fn sample(&self, rng: &mut ChaCha8Rng, tokens: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut emitted = 0;
        while emitted < tokens {
            let len = rng.random_range(4..=12);
            let mut sent = Vec::with_capacity(len);
            let mut w = self.unigram.sample(rng);
            for _ in 0..len {
                let wl = self.lexicon[w].chars.len();
                if emitted + wl > tokens {
                    break;
                }
                sent.push(w);
                emitted += wl;
                w = if rng.random_bool(self.bigram_weight) {
                    let (succ, dist) = &self.successors[w];
                    succ[dist.sample(rng)]
                } else {
                    let (ws, dist) = &self.members[self.transitions[self.class_of[w]].sample(rng)];
                    ws[dist.sample(rng)]
                };
            }
            if sent.is_empty() {
                // budget left is smaller than every sampled word; fill with the shortest word
                let shortest = (0..self.lexicon.len())
                    .min_by_key(|&i| self.lexicon[i].chars.len())
                    .expect("non-empty lexicon");
                if self.lexicon[shortest].chars.len() + emitted > tokens {
                    break;
                }
                sent.push(shortest);
                emitted += self.lexicon[shortest].chars.len();
            }
            out.push(sent);
        }
        out
    }
}


type Spellers = Vec<Vec<(usize, u8)>>;

fn build_lexicon(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    characters: &[char],
    readings: &[Vec<(usize, u8, f64)>],
    spellers: &Spellers,
    speller_dist: &[WeightedIndex<f64>],
    make_syllable: &dyn Fn(usize, u8) -> Syllable,
) -> Result<Vec<Word>> {
    let nc = characters.len();
    let syl_pop = WeightedIndex::new((0..spellers.len()).map(|i| 1.0 / (i as f64 + 2.0)).collect::<Vec<_>>())
        .expect("weights");
    let mut lexicon: Vec<Word> = Vec::with_capacity(cfg.words);
    let mut written_seen: HashSet<String> = HashSet::new();
    let mut spoken_seen: HashSet<String> = HashSet::new();
    let mut push_word = |w: Word, lexicon: &mut Vec<Word>, strict: bool| -> bool {
        let written = w.written();
        if written_seen.contains(&written) || (strict && spoken_seen.contains(&w.spoken())) {
            return false;
        }
        written_seen.insert(written);
        spoken_seen.insert(w.spoken());
        lexicon.push(w);
        true
    };
    let word_len = |rng: &mut ChaCha8Rng| match rng.random_range(0..100) {
        0..20 => 1,
        20..85 => 2,
        _ => 3,
    };
    // coverage words: one per (character, reading)
    for c in 0..nc {
        for &(p, tone, _) in &readings[c] {
            let mut placed = false;
            for attempt in 0..200 {
                let len = if attempt < 100 { word_len(rng).max(2) } else { 3 };
                let slot = rng.random_range(0..len);
                let mut chars = Vec::with_capacity(len);
                let mut reads = Vec::with_capacity(len);
                for i in 0..len {
                    let (cc, pp, tt) = if i == slot {
                        (c, p, tone)
                    } else {
                        let q = syl_pop.sample(rng);
                        let (cc, tt) = spellers[q][speller_dist[q].sample(rng)];
                        (cc, q, tt)
                    };
                    chars.push(characters[cc]);
                    reads.push(make_syllable(pp, tt));
                }
                if push_word(Word { chars, readings: reads }, &mut lexicon, true) {
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Config("could not place a coverage word; enlarge the syllable inventory".into()));
            }
        }
    }
    let mut attempts = 0;
    while lexicon.len() < cfg.words {
        attempts += 1;
        if attempts > 100 * cfg.words {
            return Err(Error::Config("could not build a lexicon of distinct words".into()));
        }
        let len = word_len(rng);
        let mut chars = Vec::with_capacity(len);
        let mut reads = Vec::with_capacity(len);
        for _ in 0..len {
            let q = syl_pop.sample(rng);
            let (cc, tt) = spellers[q][speller_dist[q].sample(rng)];
            chars.push(characters[cc]);
            reads.push(make_syllable(q, tt));
        }
        push_word(Word { chars, readings: reads }, &mut lexicon, len > 1);
    }

    Ok(lexicon)
}

impl<'a> Sampler<'a> {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng, lexicon: &'a [Word]) -> Self {
    // hidden word model: Zipf unigram over a random rank order, latent classes
    // with sparse transitions, and sparse word-specific successors
    let mut rank: Vec<usize> = (0..lexicon.len()).collect();
    for i in (1..rank.len()).rev() {
        rank.swap(i, rng.random_range(0..=i));
    }
    let mut uni = vec![0.0; lexicon.len()];
    for (r, &w) in rank.iter().enumerate() {
        uni[w] = 1.0 / (r as f64 + 1.0).powf(cfg.zipf);
    }
    // a uniform floor keeps rare words (and so every character) attested
    let z: f64 = uni.iter().sum();
    let floor = 0.25 / lexicon.len() as f64;
    uni.iter_mut().for_each(|u| *u = 0.75 * *u / z + floor);
    let unigram = WeightedIndex::new(&uni).expect("weights");
    let successors: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..lexicon.len())
        .map(|_| {
            let succ: Vec<usize> = (0..cfg.successors.max(1)).map(|_| unigram.sample(rng)).collect();
            let w = gamma_weights(rng, succ.len(), 0.5);
            (succ, WeightedIndex::new(w).expect("weights"))
        })
        .collect();
    // skewed class sizes: a few large open classes, many small ones
    let k = cfg.word_classes;
    let mut class_of: Vec<usize> = (0..lexicon.len()).map(|_| ((rng.random::<f64>().powi(2) * k as f64) as usize).min(k - 1)).collect();
    // no empty classes: class c < lexicon size gets word rank[c]
    for (c, &w) in rank.iter().enumerate().take(k) {
        class_of[w] = c;
    }
    let members: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..k)
        .map(|c| {
            let ws: Vec<usize> = (0..lexicon.len()).filter(|&w| class_of[w] == c).collect();
            let wt: Vec<f64> = if ws.is_empty() { vec![1.0] } else { ws.iter().map(|&w| uni[w]).collect() };
            let ws = if ws.is_empty() { vec![rank[0]] } else { ws };
            (ws, WeightedIndex::new(wt).expect("weights"))
        })
        .collect();
    let transitions: Vec<WeightedIndex<f64>> = (0..k)
        .map(|_| {
            // tiny floor so every class stays reachable
            let w: Vec<f64> = gamma_weights(rng, k, cfg.class_concentration).into_iter().map(|x| x + 1e-3 / k as f64).collect();
            WeightedIndex::new(w).expect("weights")
        })
        .collect();
        Sampler {
            lexicon,
            unigram,
            successors,
            bigram_weight: cfg.bigram_weight,
            class_of,
            transitions,
            members,
        }
    }
}

/// Generates character and syllable corpora, a held-out test slice and the
/// answer key.
pub fn gen_cipher_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let ns = cfg.syllables;
    let nc = cfg.characters;

    let syllables: Vec<String> = SYLLABLES.iter().take(ns).map(|s| s.to_string()).collect();
    let characters: Vec<char> = (0..nc as u32)
        .map(|i| char::from_u32(CJK_BASE + i).expect("valid CJK code point"))
        .collect();

    // primary reading: every syllable gets one character, the rest spread by weight
    let mut order: Vec<usize> = (0..nc).collect();
    for i in (1..nc).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut primary = vec![0usize; nc];
    let spread = WeightedIndex::new(gamma_weights(&mut rng, ns, cfg.fanout_concentration)).expect("weights");
    for (k, &c) in order.iter().enumerate() {
        primary[c] = if k < ns { k } else { spread.sample(&mut rng) };
    }
    // readings[c] = [(syllable, tone, spelling share)]
    let mut readings: Vec<Vec<(usize, u8, f64)>> = (0..nc)
        .map(|c| vec![(primary[c], rng.random_range(0..cfg.tones), 1.0)])
        .collect();
    let n_het = (cfg.heteronym_fraction * nc as f64).round() as usize;
    let mut het_order: Vec<usize> = (0..nc).collect();
    for i in (1..nc).rev() {
        het_order.swap(i, rng.random_range(0..=i));
    }
    for &c in het_order.iter().take(n_het) {
        let mut other = rng.random_range(0..ns - 1);
        if other >= primary[c] {
            other += 1;
        }
        readings[c][0].2 = cfg.heteronym_split;
        readings[c].push((other, rng.random_range(0..cfg.tones), 1.0 - cfg.heteronym_split));
    }

    // spelling distribution per syllable over the characters that can read it
    let spell_weight = gamma_weights(&mut rng, nc, 1.0);
    let mut spellers: Vec<Vec<(usize, u8)>> = vec![Vec::new(); ns];
    let mut speller_w: Vec<Vec<f64>> = vec![Vec::new(); ns];
    for c in 0..nc {
        for &(p, tone, share) in &readings[c] {
            spellers[p].push((c, tone));
            speller_w[p].push(spell_weight[c] * share);
        }
    }
    // a uniform floor within each syllable keeps rare spellings attested
    let speller_dist: Vec<WeightedIndex<f64>> = speller_w
        .iter()
        .map(|w| {
            let z: f64 = w.iter().sum();
            let k = w.len() as f64;
            let floored: Vec<f64> = w.iter().map(|x| 0.8 * x / z + 0.2 / k).collect();
            WeightedIndex::new(floored).expect("every syllable has a character")
        })
        .collect();
    let make_syllable = |p: usize, tone: u8| Syllable::new(syllables[p].clone(), tone).expect("inventory syllables are valid");
    let streams = [cfg.char_tokens, cfg.syllable_tokens, cfg.test_tokens];
    let (lexicon, sents): (Vec<Word>, Vec<Vec<Vec<Word>>>) = match cfg.source {
        LmSource::Trigram { concentration } => {
            let mut lexicon = Vec::new();
            for c in 0..nc {
                for &(p, tone, _) in &readings[c] {
                    lexicon.push(Word { chars: vec![characters[c]], readings: vec![make_syllable(p, tone)] });
                }
            }
            // histories (a, b) over syllables plus a start marker at index ns
            let base: Vec<f64> = (0..ns).map(|i| 1.0 / (i as f64 + 2.0)).collect();
            let z: f64 = base.iter().sum();
            let rows: Vec<WeightedIndex<f64>> = (0..(ns + 1) * (ns + 1))
                .map(|_| {
                    let w: Vec<f64> = base
                        .iter()
                        .map(|b| {
                            let g = Gamma::new(concentration * b / z, 1.0).expect("positive shape");
                            g.sample(&mut rng).max(1e-300)
                        })
                        .collect();
                    WeightedIndex::new(w).expect("weights")
                })
                .collect();
            let sample = |rng: &mut ChaCha8Rng, tokens: usize| -> Vec<Vec<Word>> {
                let mut out = Vec::new();
                let mut emitted = 0;
                while emitted < tokens {
                    let len = rng.random_range(4..=12).min(tokens - emitted);
                    let (mut a, mut b) = (ns, ns);
                    let mut sent = Vec::with_capacity(len);
                    for _ in 0..len {
                        let p = rows[a * (ns + 1) + b].sample(rng);
                        let (c, tone) = spellers[p][speller_dist[p].sample(rng)];
                        sent.push(Word { chars: vec![characters[c]], readings: vec![make_syllable(p, tone)] });
                        (a, b) = (b, p);
                    }
                    emitted += len;
                    out.push(sent);
                }
                out
            };
            let sents = streams.iter().enumerate().map(|(i, &t)| sample(&mut stream(cfg.seed, i as u64 + 1), t)).collect();
            (lexicon, sents)
        }
        LmSource::Words => {
            let lexicon = build_lexicon(cfg, &mut rng, &characters, &readings, &spellers, &speller_dist, &make_syllable)?;
            let sampler = Sampler::new(cfg, &mut rng, &lexicon);
            let sents = streams
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    sampler
                        .sample(&mut stream(cfg.seed, i as u64 + 1), t)
                        .into_iter()
                        .map(|s| s.into_iter().map(|w| lexicon[w].clone()).collect())
                        .collect()
                })
                .collect();
            (lexicon, sents)
        }
    };

    let render_chars = |sents: &[Vec<Word>]| -> (Vec<String>, Vec<Vec<String>>, Vec<Vec<Syllable>>) {
        let mut lines = Vec::with_capacity(sents.len());
        let mut words = Vec::with_capacity(sents.len());
        let mut gold = Vec::with_capacity(sents.len());
        for s in sents {
            let ws: Vec<String> = s.iter().map(Word::written).collect();
            lines.push(ws.concat());
            words.push(ws);
            gold.push(s.iter().flat_map(|w| w.readings.iter().cloned()).collect());
        }
        (lines, words, gold)
    };
    let (char_lines, char_words, char_gold) = render_chars(&sents[0]);
    let (test_lines, test_words, test_gold) = render_chars(&sents[2]);
    let syllable_lines: Vec<Vec<Syllable>> = sents[1]
        .iter()
        .map(|s| s.iter().flat_map(|w| w.readings.iter().cloned()).collect())
        .collect();
    let syllable_words: Vec<Vec<String>> = sents[1].iter().map(|s| s.iter().map(Word::spoken).collect()).collect();

    let mut reading_counts: BTreeMap<char, BTreeMap<String, usize>> = BTreeMap::new();
    for (line, gold) in char_lines.iter().zip(&char_gold) {
        for (c, s) in line.chars().zip(gold) {
            *reading_counts.entry(c).or_default().entry(s.base().to_owned()).or_default() += 1;
        }
    }
    if let Some((c, n)) = characters
        .iter()
        .map(|c| (*c, reading_counts.get(c).map_or(0, |r| r.values().sum::<usize>())))
        .find(|&(_, n)| n < cfg.min_count)
    {
        return Err(Error::Config(format!(
            "character {c} occurs {n} times, below the minimum of {}; enlarge the character corpus",
            cfg.min_count
        )));
    }
    let gold = GoldMapping {
        readings: reading_counts
            .into_iter()
            .map(|(c, rs)| {
                let total: usize = rs.values().sum();
                (c, rs.into_iter().map(|(s, n)| (s, n as f64 / total as f64)).collect())
            })
            .collect(),
    };

    let mut decomposition = DecompositionTable::new();
    if cfg.phonetic_components > 0.0 {
        let mut crng = stream(cfg.seed, 4);
        let n_radicals = 12u32;
        for c in 0..nc {
            let radical = char::from_u32(COMPONENT_BASE + crng.random_range(0..n_radicals)).expect("valid");
            let phon = if crng.random_bool(cfg.phonetic_components.min(1.0)) {
                primary[c]
            } else {
                crng.random_range(0..ns)
            };
            let phonetic = char::from_u32(COMPONENT_BASE + n_radicals + phon as u32).expect("valid");
            decomposition.insert(characters[c], radical, Some(phonetic));
        }
    }

    Ok(SynthCorpus {
        config: cfg.clone(),
        syllables,
        characters,
        lexicon,
        char_lines,
        char_words,
        char_gold,
        syllable_lines,
        syllable_words,
        test: TestSet {
            lines: test_lines,
            words: test_words,
            gold: test_gold,
        },
        gold,
        decomposition,
    })
}

impl SynthCorpus {
    pub fn char_token_count(&self) -> usize {
        self.char_gold.iter().map(Vec::len).sum()
    }

    pub fn syllable_token_count(&self) -> usize {
        self.syllable_lines.iter().map(Vec::len).sum()
    }

    /// Toneless syllable lines of the spoken corpus.
    pub fn syllable_text(&self, tones: bool) -> Vec<String> {
        self.syllable_lines
            .iter()
            .map(|l| {
                l.iter()
                    .map(|s| if tones { s.numeric() } else { s.base().to_owned() })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    /// Gold `(character, toneless reading)` pairs for the given characters,
    /// by majority reading.
    pub fn gold_pairs(&self, chars: impl IntoIterator<Item = char>) -> Vec<(String, String)> {
        chars
            .into_iter()
            .filter_map(|c| self.gold.majority(c).map(|s| (c.to_string(), s.to_owned())))
            .collect()
    }

    /// Character types of the corpus ordered by descending frequency.
    pub fn chars_by_frequency(&self) -> Vec<char> {
        let mut counts: HashMap<char, usize> = HashMap::new();
        for l in &self.char_lines {
            for c in l.chars() {
                *counts.entry(c).or_default() += 1;
            }
        }
        let mut v: Vec<(char, usize)> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().map(|(c, _)| c).collect()
    }

    /// The lexicon as a pronunciation dictionary (`word<TAB>syl1 syl2 …`).
    pub fn dictionary_tsv(&self) -> String {
        let mut out = String::new();
        for w in &self.lexicon {
            let pron: Vec<String> = w.readings.iter().map(Syllable::numeric).collect();
            let _ = writeln!(out, "{}\t{}", w.written(), pron.join(" "));
        }
        out
    }

    /// Writes the corpus files into `dir`:
    /// `chars.txt`, `chars.seg.txt`, `chars.ref.txt`, `syllables.txt`,
    /// `syllables.seg.txt`, `test.chars.txt`, `test.seg.txt`, `test.ref.txt`,
    /// `gold.tsv`, `dict.tsv` and (with components) `decomp.tsv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lines = |v: &[String]| -> String { v.iter().map(|l| format!("{l}\n")).collect() };
        let joined = |v: &[Vec<String>]| -> Vec<String> { v.iter().map(|w| w.join(" ")).collect() };
        let marked = |v: &[Vec<Syllable>]| -> Vec<String> {
            v.iter()
                .map(|l| l.iter().map(Syllable::marked).collect::<Vec<_>>().join(" "))
                .collect()
        };
        let mut gold = String::new();
        for (c, rs) in &self.gold.readings {
            for (s, p) in rs {
                let _ = writeln!(gold, "{c}\t{s}\t{p}");
            }
        }
        let mut files = vec![
            ("chars.txt", lines(&self.char_lines)),
            ("chars.seg.txt", lines(&joined(&self.char_words))),
            ("chars.ref.txt", lines(&marked(&self.char_gold))),
            ("syllables.txt", lines(&self.syllable_text(true))),
            ("syllables.seg.txt", lines(&joined(&self.syllable_words))),
            ("test.chars.txt", lines(&self.test.lines)),
            ("test.seg.txt", lines(&joined(&self.test.words))),
            ("test.ref.txt", lines(&marked(&self.test.gold))),
            ("gold.tsv", gold),
            ("dict.tsv", self.dictionary_tsv()),
        ];
        if !self.decomposition.is_empty() {
            files.push(("decomp.tsv", self.decomposition.to_tsv()));
        }
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            char_tokens: 20_000,
            syllable_tokens: 20_000,
            test_tokens: 500,
            min_count: 1,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = gen_cipher_corpus(&small()).unwrap();
        let b = gen_cipher_corpus(&small()).unwrap();
        assert_eq!(a.char_lines, b.char_lines);
        assert_eq!(a.syllable_words, b.syllable_words);
        assert_eq!(a.test, b.test);
        let c = gen_cipher_corpus(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.char_lines, c.char_lines);
    }

    #[test]
    fn type_counts_and_sizes_follow_config() {
        let s = gen_cipher_corpus(&SynthConfig::default()).unwrap();
        let syls: HashSet<&str> = s.syllable_lines.iter().flatten().map(Syllable::base).collect();
        let chars: HashSet<char> = s.char_lines.iter().flat_map(|l| l.chars()).collect();
        assert_eq!(syls.len(), 50);
        assert_eq!(chars.len(), 200);
        assert_eq!(s.char_token_count(), 200_000);
        assert_eq!(s.syllable_token_count(), 200_000);
        assert_eq!(s.test.num_tokens(), 2_000);
        assert_eq!(s.lexicon.len(), 210);
    }

    #[test]
    fn word_source_spells_every_reading() {
        let cfg = SynthConfig { source: LmSource::Words, ..Default::default() };
        let s = gen_cipher_corpus(&cfg).unwrap();
        assert_eq!(s.lexicon.len(), 400);
        assert_eq!(s.gold.readings.len(), 200);
        assert_eq!(s.char_token_count(), 200_000);
        assert_eq!(s.syllable_token_count(), 200_000);
        assert!(s.char_words.iter().flatten().any(|w| w.chars().count() > 1));
        assert!(s.syllable_words.iter().flatten().any(|w| w.contains('-')));
        assert_eq!(s.char_lines, gen_cipher_corpus(&cfg).unwrap().char_lines);
    }

    #[test]
    fn corpora_are_not_parallel() {
        let s = gen_cipher_corpus(&small()).unwrap();
        let a: Vec<&str> = s.char_gold.iter().flatten().map(Syllable::base).collect();
        let b: Vec<&str> = s.syllable_lines.iter().flatten().map(Syllable::base).collect();
        let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        assert!((same as f64) < 0.5 * a.len() as f64);
        assert_ne!(s.char_words.len(), 0);
        assert_ne!(s.char_words, s.syllable_words);
    }

    #[test]
    fn gold_is_normalized_with_expected_heteronyms() {
        let cfg = SynthConfig { heteronym_fraction: 0.25, ..small() };
        let s = gen_cipher_corpus(&cfg).unwrap();
        for rs in s.gold.readings.values() {
            let t: f64 = rs.iter().map(|(_, p)| p).sum();
            assert!((t - 1.0).abs() < 1e-12);
        }
        let f = s.gold.heteronym_fraction();
        assert!((f - 0.25).abs() < 0.08, "{f}");
        let none = gen_cipher_corpus(&small()).unwrap();
        assert!(none.gold.heteronym_fraction() < 0.1);
    }

    #[test]
    fn every_character_is_attested_often_enough() {
        for seed in 0..3 {
            let s = gen_cipher_corpus(&SynthConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(s.gold.readings.len(), 200);
            let mut counts: HashMap<char, usize> = HashMap::new();
            s.char_lines.iter().flat_map(|l| l.chars()).for_each(|c| *counts.entry(c).or_default() += 1);
            assert!(counts.values().all(|&n| n >= 5), "seed {seed}");
        }
        let tiny = SynthConfig { char_tokens: 300, ..Default::default() };
        assert!(gen_cipher_corpus(&tiny).is_err());
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        assert!(gen_cipher_corpus(&SynthConfig { characters: 10, ..small() }).is_err());
        assert!(gen_cipher_corpus(&SynthConfig { syllables: 1000, ..small() }).is_err());
        assert!(gen_cipher_corpus(&SynthConfig { words: 5, source: LmSource::Words, ..small() }).is_err());
        assert!(gen_cipher_corpus(&SynthConfig { source: LmSource::Trigram { concentration: 0.0 }, ..small() }).is_err());
    }

    #[test]
    fn components_track_primary_readings() {
        let s = gen_cipher_corpus(&SynthConfig { phonetic_components: 1.0, ..small() }).unwrap();
        assert_eq!(s.decomposition.len(), 200);
        let mut by_part: HashMap<char, HashSet<String>> = HashMap::new();
        for &c in &s.characters {
            let p2 = s.decomposition.decompose(c).part2().unwrap();
            let lex_reading = s
                .lexicon
                .iter()
                .flat_map(|w| w.chars.iter().zip(&w.readings))
                .find(|(x, _)| **x == c)
                .map(|(_, r)| r.base().to_owned())
                .unwrap();
            by_part.entry(p2).or_default().insert(lex_reading);
        }
        assert!(by_part.len() <= 50);
    }
}
