//! Syllable structure (tones, onset/rime) and top-level character decomposition.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Standard pinyin initials, longest first so that `zh` wins over `z`.
pub const INITIALS: [&str; 23] = [
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s", "y", "w",
];

const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u', 'v'];

// Syllabic consonants and interjections accepted without a vowel (r, m, n, ng, hm, hng).
const SYLLABIC: &[char] = &['m', 'n', 'g', 'h', 'r'];

/// A Mandarin syllable: lowercase toneless base (ü written `v`) plus tone 0..=4,
/// where 0 is the neutral tone.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Syllable {
    base: String,
    tone: u8,
}

impl Syllable {
    pub fn new(base: impl Into<String>, tone: u8) -> Result<Self> {
        let base = base.into();
        if base.is_empty() || !base.bytes().all(|b| b.is_ascii_lowercase()) || tone > 4 {
            return Err(Error::NotASyllable(format!("{base}{tone}")));
        }
        Ok(Self { base, tone })
    }

    /// Parses numeric (`dang1`, `de5`, `de0`, `lu:4`), tone-marked (`dāng`, `lǜ`)
    /// or bare (`dang`, neutral) spellings.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::NotASyllable(s.to_owned());
        let lowered = s.trim().to_lowercase().replace("u:", "v");
        if lowered.is_empty() {
            return Err(bad());
        }
        let mut base = String::with_capacity(lowered.len());
        let mut tone = 0u8;
        let mut chars = lowered.chars().peekable();
        while let Some(ch) = chars.next() {
            if let Some(d) = ch.to_digit(10) {
                if chars.peek().is_some() || base.is_empty() || d > 5 {
                    return Err(bad());
                }
                tone = if d == 5 { 0 } else { d as u8 };
                break;
            }
            match unmark(ch) {
                Some((plain, t)) => {
                    if t != 0 {
                        if tone != 0 {
                            return Err(bad());
                        }
                        tone = t;
                    }
                    base.push(plain);
                }
                None => return Err(bad()),
            }
        }
        Syllable::new(base, tone).map_err(|_| bad())
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn tone(&self) -> u8 {
        self.tone
    }

    /// The toneless base; idempotent on already-toneless syllables.
    pub fn strip_tone(&self) -> Syllable {
        Syllable {
            base: self.base.clone(),
            tone: 0,
        }
    }

    /// Machine format: `dang1`..`dang4`, neutral tone written `5` as in
    /// common dictionary files.
    pub fn numeric(&self) -> String {
        let t = if self.tone == 0 { 5 } else { self.tone };
        format!("{}{}", self.base, t)
    }

    /// Display format with a tone mark on the nucleus vowel and `ü` restored.
    pub fn marked(&self) -> String {
        let chars: Vec<char> = self.base.chars().collect();
        let target = if self.tone == 0 {
            None
        } else if let Some(i) = chars.iter().position(|&c| c == 'a') {
            Some(i)
        } else if let Some(i) = chars.iter().position(|&c| c == 'e') {
            Some(i)
        } else if let Some(i) = self.base.find("ou") {
            Some(i)
        } else {
            chars.iter().rposition(|c| VOWELS.contains(c))
        };
        chars
            .iter()
            .enumerate()
            .map(|(i, &c)| match target {
                Some(t) if t == i => mark(c, self.tone),
                _ if c == 'v' => 'ü',
                _ => c,
            })
            .collect()
    }

    pub fn onset_rime(&self) -> Result<OnsetRime> {
        split_onset_rime(&self.base)
    }
}

impl fmt::Display for Syllable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.marked())
    }
}

impl FromStr for Syllable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Syllable::parse(s)
    }
}

pub fn strip_tone(s: &Syllable) -> String {
    s.base.clone()
}

/// Toneless base of any accepted syllable spelling.
pub fn toneless(s: &str) -> Result<String> {
    Ok(Syllable::parse(s)?.base)
}

const MARKS: [(char, [char; 4]); 6] = [
    ('a', ['ā', 'á', 'ǎ', 'à']),
    ('e', ['ē', 'é', 'ě', 'è']),
    ('i', ['ī', 'í', 'ǐ', 'ì']),
    ('o', ['ō', 'ó', 'ǒ', 'ò']),
    ('u', ['ū', 'ú', 'ǔ', 'ù']),
    ('v', ['ǖ', 'ǘ', 'ǚ', 'ǜ']),
];

fn mark(c: char, tone: u8) -> char {
    MARKS
        .iter()
        .find(|(v, _)| *v == c)
        .map(|(_, m)| m[tone as usize - 1])
        .unwrap_or(c)
}

fn unmark(c: char) -> Option<(char, u8)> {
    if c.is_ascii_lowercase() {
        return Some((c, 0));
    }
    if c == 'ü' {
        return Some(('v', 0));
    }
    for (plain, marks) in MARKS {
        if let Some(i) = marks.iter().position(|&m| m == c) {
            return Some((plain, i as u8 + 1));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OnsetRime {
    pub onset: String,
    pub rime: String,
}

/// Splits a toneless base into the longest matching initial and the remainder.
/// Vowelless syllabic forms (`r`, `m`, `ng`, `hm`) get an empty onset.
pub fn split_onset_rime(base: &str) -> Result<OnsetRime> {
    if base.is_empty() || !base.bytes().all(|b| b.is_ascii_lowercase()) {
        return Err(Error::NotASyllable(base.to_owned()));
    }
    let has_vowel = |s: &str| s.chars().any(|c| VOWELS.contains(&c));
    for initial in INITIALS {
        if let Some(rest) = base.strip_prefix(initial) {
            if !rest.is_empty() && has_vowel(rest) {
                return Ok(OnsetRime {
                    onset: initial.to_owned(),
                    rime: rest.to_owned(),
                });
            }
        }
    }
    if has_vowel(base) || base.chars().all(|c| SYLLABIC.contains(&c)) {
        Ok(OnsetRime {
            onset: String::new(),
            rime: base.to_owned(),
        })
    } else {
        Err(Error::NotASyllable(base.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decomposition {
    Parts(char, Option<char>),
    Atomic,
}

impl Decomposition {
    pub fn part1(self) -> Option<char> {
        match self {
            Decomposition::Parts(p, _) => Some(p),
            Decomposition::Atomic => None,
        }
    }

    pub fn part2(self) -> Option<char> {
        match self {
            Decomposition::Parts(_, p) => p,
            Decomposition::Atomic => None,
        }
    }
}

/// Top-level graphical decompositions: character → (part1, part2?).
#[derive(Clone, Debug, Default)]
pub struct DecompositionTable {
    parts: HashMap<char, (char, Option<char>)>,
}

impl DecompositionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: char, part1: char, part2: Option<char>) {
        self.parts.insert(c, (part1, part2));
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn decompose(&self, c: char) -> Decomposition {
        match self.parts.get(&c) {
            Some(&(p1, p2)) => Decomposition::Parts(p1, p2),
            None => Decomposition::Atomic,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, char, Option<char>)> + '_ {
        self.parts.iter().map(|(&c, &(a, b))| (c, a, b))
    }

    /// Characters whose first component is `part`, sorted.
    pub fn with_part1(&self, part: char) -> Vec<char> {
        self.reverse(|(p1, _)| p1 == part)
    }

    /// Characters whose second component is `part`, sorted.
    pub fn with_part2(&self, part: char) -> Vec<char> {
        self.reverse(|(_, p2)| p2 == Some(part))
    }

    fn reverse(&self, pred: impl Fn((char, Option<char>)) -> bool) -> Vec<char> {
        let mut out: Vec<char> = self
            .parts
            .iter()
            .filter(|(_, &v)| pred(v))
            .map(|(&c, _)| c)
            .collect();
        out.sort_unstable();
        out
    }

    /// Component → characters index over the second part.
    pub fn part2_index(&self) -> BTreeMap<char, Vec<char>> {
        let mut idx: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (&c, &(_, p2)) in &self.parts {
            if let Some(p2) = p2 {
                idx.entry(p2).or_default().push(c);
            }
        }
        for v in idx.values_mut() {
            v.sort_unstable();
        }
        idx
    }

    /// Parses `char<TAB>part1<TAB>part2` lines; part2 may be empty or absent.
    /// Blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut table = DecompositionTable::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let one = |s: &str| -> Result<char> {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::parse(
                        "decomposition",
                        lineno + 1,
                        format!("expected a single character, got {s:?}"),
                    )),
                }
            };
            let c = one(fields[0])?;
            match fields.get(1).filter(|s| !s.is_empty()) {
                None => continue,
                Some(p1) => {
                    let p2 = match fields.get(2).filter(|s| !s.is_empty()) {
                        Some(p2) => Some(one(p2)?),
                        None => None,
                    };
                    table.insert(c, one(p1)?, p2);
                }
            }
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<_> = self.iter().collect();
        rows.sort_unstable();
        rows.iter()
            .map(|(c, a, b)| match b {
                Some(b) => format!("{c}\t{a}\t{b}\n"),
                None => format!("{c}\t{a}\t\n"),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tone_series_strips_to_one_base() {
        for s in ["dāng", "dáng", "dǎng", "dàng", "dang"] {
            let syl = Syllable::parse(s).unwrap();
            assert_eq!(strip_tone(&syl), "dang");
        }
        assert_eq!(Syllable::parse("dang").unwrap().tone(), 0);
        assert_eq!(Syllable::parse("dàng").unwrap().tone(), 4);
    }

    #[test]
    fn umlaut_renders_as_v() {
        let lv = Syllable::parse("lǜ").unwrap();
        assert_eq!(lv.base(), "lv");
        assert_eq!(lv.tone(), 4);
        assert_eq!(Syllable::parse("lu:4").unwrap(), lv);
        assert_eq!(Syllable::parse("lv4").unwrap(), lv);
        assert_eq!(lv.marked(), "lǜ");
        assert_eq!(Syllable::parse("nü").unwrap().marked(), "nü");
    }

    #[test]
    fn numeric_forms() {
        assert_eq!(Syllable::parse("de5").unwrap().tone(), 0);
        assert_eq!(Syllable::parse("de0").unwrap().tone(), 0);
        assert_eq!(Syllable::parse("Zhong1").unwrap().base(), "zhong");
        assert_eq!(Syllable::parse("shui4").unwrap().numeric(), "shui4");
        assert_eq!(Syllable::parse("de").unwrap().numeric(), "de5");
        assert!(Syllable::parse("").is_err());
        assert!(Syllable::parse("ba7").is_err());
        assert!(Syllable::parse("b4a").is_err());
        assert!(Syllable::parse("中").is_err());
    }

    #[test]
    fn mark_placement_rules() {
        let cases = [
            ("hao3", "hǎo"),
            ("xue2", "xué"),
            ("gou3", "gǒu"),
            ("gui4", "guì"),
            ("liu2", "liú"),
            ("zhong1", "zhōng"),
            ("er2", "ér"),
        ];
        for (num, marked) in cases {
            assert_eq!(Syllable::parse(num).unwrap().marked(), marked, "{num}");
        }
    }

    #[test]
    fn onset_rime_examples() {
        let zr = split_onset_rime("zhang").unwrap();
        assert_eq!((zr.onset.as_str(), zr.rime.as_str()), ("zh", "ang"));
        let z = split_onset_rime("ang").unwrap();
        assert_eq!((z.onset.as_str(), z.rime.as_str()), ("", "ang"));
        let h = split_onset_rime("hao").unwrap();
        let m = split_onset_rime("mao").unwrap();
        assert_ne!(h.onset, m.onset);
        assert_eq!(h.rime, m.rime);
        assert_eq!(split_onset_rime("yi").unwrap().onset, "y");
        assert_eq!(split_onset_rime("wo").unwrap().onset, "w");
        assert_eq!(split_onset_rime("ri").unwrap().onset, "r");
    }

    #[test]
    fn lenient_syllabic_forms_and_errors() {
        for s in ["r", "m", "ng", "hm", "hng"] {
            let or = split_onset_rime(s).unwrap();
            assert_eq!(or.onset, "");
            assert_eq!(or.rime, s);
        }
        assert!(split_onset_rime("xyz").is_err());
        assert!(split_onset_rime("").is_err());
        assert!(split_onset_rime("Zh4").is_err());
    }

    #[test]
    fn decomposition_lookup() {
        let t = DecompositionTable::from_tsv("鸦\t牙\t鸟\n咆\t口\t包\n炮\t火\t包\n口\t\t\n").unwrap();
        assert_eq!(t.decompose('鸦'), Decomposition::Parts('牙', Some('鸟')));
        assert_eq!(t.decompose('中'), Decomposition::Atomic);
        assert_eq!(t.decompose('口'), Decomposition::Atomic);
        assert_eq!(t.with_part2('包'), vec!['咆', '炮']);
        let idx = t.part2_index();
        for (part, chars) in &idx {
            for c in chars {
                assert_eq!(t.decompose(*c).part2(), Some(*part));
            }
        }
    }

    #[test]
    fn two_field_lines_have_no_second_part() {
        let t = DecompositionTable::from_tsv("本\t木\n").unwrap();
        assert_eq!(t.decompose('本'), Decomposition::Parts('木', None));
        assert!(DecompositionTable::from_tsv("本\t木木\t\n").is_err());
    }

    fn syllable_strategy() -> impl Strategy<Value = Syllable> {
        let bases = prop::sample::select(vec![
            "a", "ai", "ang", "ba", "bian", "chuang", "de", "er", "gou", "gui", "hao", "jiong",
            "lv", "lve", "liu", "nv", "ou", "qu", "shui", "xue", "yao", "zhong", "zhuang",
        ]);
        (bases, 0u8..5).prop_map(|(b, t)| Syllable::new(b, t).unwrap())
    }

    proptest! {
        #[test]
        fn marked_round_trip(s in syllable_strategy()) {
            let marked = s.marked();
            let back = Syllable::parse(&marked).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.marked(), marked);
            prop_assert_eq!(Syllable::parse(&s.numeric()).unwrap(), s.clone());
        }

        #[test]
        fn onset_plus_rime_is_base(s in syllable_strategy()) {
            let or = s.onset_rime().unwrap();
            prop_assert_eq!(format!("{}{}", or.onset, or.rime), s.base());
            prop_assert!(or.onset.is_empty() || INITIALS.contains(&or.onset.as_str()));
        }
    }
}
