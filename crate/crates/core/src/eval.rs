//! Pronunciation accuracy and the supervised comparison points.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::phonology::{split_onset_rime, DecompositionTable, Syllable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalMode {
    ExactTone,
    ExactNoTone,
    /// Toneless onset or rime equal.
    Partial,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::ExactTone, EvalMode::ExactNoTone, EvalMode::Partial];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::ExactTone => "exact-tone",
            EvalMode::ExactNoTone => "exact-no-tone",
            EvalMode::Partial => "partial",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-tone" | "tone" => Ok(EvalMode::ExactTone),
            "exact-no-tone" | "exact" | "no-tone" => Ok(EvalMode::ExactNoTone),
            "partial" => Ok(EvalMode::Partial),
            _ => Err(Error::Config(format!("unknown evaluation mode {s:?}"))),
        }
    }
}

/// Whether `hyp` is credited against `reference` under `mode`.
pub fn matches(hyp: &Syllable, reference: &Syllable, mode: EvalMode) -> bool {
    match mode {
        EvalMode::ExactTone => hyp == reference,
        EvalMode::ExactNoTone => hyp.base() == reference.base(),
        EvalMode::Partial => {
            if hyp.base() == reference.base() {
                return true;
            }
            match (split_onset_rime(hyp.base()), split_onset_rime(reference.base())) {
                (Ok(h), Ok(r)) => h.onset == r.onset || h.rime == r.rime,
                _ => false,
            }
        }
    }
}

/// Fraction of positions credited under `mode`.
pub fn token_accuracy(hyp: &[Syllable], reference: &[Syllable], mode: EvalMode) -> Result<f64> {
    if hyp.len() != reference.len() {
        return Err(Error::LengthMismatch(hyp.len(), reference.len()));
    }
    if reference.is_empty() {
        return Err(Error::Empty("reference stream"));
    }
    let ok = hyp.iter().zip(reference).filter(|(h, r)| matches(h, r, mode)).count();
    Ok(ok as f64 / reference.len() as f64)
}

/// Per-character tallies under the no-tone mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CharErrors {
    pub total: f64,
    pub wrong: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Scored items (tokens, or character types for type-level reports).
    pub tokens: usize,
    /// Total weight (equals `tokens` unless items are weighted).
    pub weight: f64,
    pub exact_tone: f64,
    pub exact_no_tone: f64,
    pub partial: f64,
    pub per_char: BTreeMap<String, CharErrors>,
}

impl EvalReport {
    pub fn accuracy(&self, mode: EvalMode) -> f64 {
        match mode {
            EvalMode::ExactTone => self.exact_tone,
            EvalMode::ExactNoTone => self.exact_no_tone,
            EvalMode::Partial => self.partial,
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.exact_tone <= self.exact_no_tone && self.exact_no_tone <= self.partial
    }

    /// `metric<TAB>value` lines followed by the characters with errors,
    /// most errors first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tokens\t{}", self.tokens);
        for m in EvalMode::ALL {
            let _ = writeln!(out, "{}\t{:.6}", m.as_str(), self.accuracy(m));
        }
        let mut errs: Vec<(&String, &CharErrors)> = self.per_char.iter().filter(|(_, e)| e.wrong > 0.0).collect();
        errs.sort_by(|a, b| b.1.wrong.total_cmp(&a.1.wrong).then_with(|| a.0.cmp(b.0)));
        for (c, e) in errs {
            let _ = writeln!(out, "error\t{c}\t{}\t{}", e.wrong, e.total);
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} tokens: {:.4} exact (tone) / {:.4} exact (no tone) / {:.4} partial",
            self.tokens, self.exact_tone, self.exact_no_tone, self.partial
        )
    }
}

/// One scored item: a character, an optional prediction (`None` is always
/// wrong), the reference reading and a weight.
pub struct Item<'a> {
    pub char: &'a str,
    pub hyp: Option<&'a Syllable>,
    pub reference: &'a Syllable,
    pub weight: f64,
}

fn report_from<'a>(items: impl IntoIterator<Item = (Item<'a>, [bool; 3])>) -> EvalReport {
    let mut r = EvalReport::default();
    let mut hits = [0.0; 3];
    for (item, ok) in items {
        r.tokens += 1;
        r.weight += item.weight;
        for m in 0..3 {
            if ok[m] {
                hits[m] += item.weight;
            }
        }
        let e = r.per_char.entry(item.char.to_owned()).or_default();
        e.total += item.weight;
        if !ok[1] {
            e.wrong += item.weight;
        }
    }
    if r.weight > 0.0 {
        r.exact_tone = hits[0] / r.weight;
        r.exact_no_tone = hits[1] / r.weight;
        r.partial = hits[2] / r.weight;
    }
    r
}

fn credit(hyp: Option<&Syllable>, reference: &Syllable) -> [bool; 3] {
    match hyp {
        None => [false; 3],
        Some(h) => EvalMode::ALL.map(|m| matches(h, reference, m)),
    }
}

/// Scores a prediction stream aligned with characters and references.
pub fn evaluate(chars: &[String], hyp: &[Syllable], reference: &[Syllable]) -> Result<EvalReport> {
    if hyp.len() != reference.len() {
        return Err(Error::LengthMismatch(hyp.len(), reference.len()));
    }
    if chars.len() != reference.len() {
        return Err(Error::LengthMismatch(chars.len(), reference.len()));
    }
    Ok(report_from(chars.iter().zip(hyp).zip(reference).map(|((c, h), r)| {
        (
            Item {
                char: c,
                hyp: Some(h),
                reference: r,
                weight: 1.0,
            },
            credit(Some(h), r),
        )
    })))
}

/// Whether items are character types (each counted once) or tokens
/// (weighted by corpus frequency).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Level {
    #[default]
    Type,
    Token,
}

/// A test character with its reference reading and corpus frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct TestChar {
    pub char: String,
    pub reference: Syllable,
    pub count: u64,
}

fn weight(t: &TestChar, level: Level) -> f64 {
    match level {
        Level::Type => 1.0,
        Level::Token => t.count as f64,
    }
}

/// Predicts the most frequent syllable of the training pronunciation list
/// (ties to the smaller syllable) for every test character.
pub fn majority_baseline(training: &[Syllable], test: &[TestChar], level: Level) -> Result<(Syllable, EvalReport)> {
    let mut counts: HashMap<&Syllable, usize> = HashMap::new();
    for s in training {
        *counts.entry(s).or_default() += 1;
    }
    let (best, _) = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .ok_or(Error::Empty("training pronunciations"))?;
    let best = best.clone();
    let report = report_from(test.iter().map(|t| {
        (
            Item {
                char: &t.char,
                hyp: Some(&best),
                reference: &t.reference,
                weight: weight(t, level),
            },
            credit(Some(&best), &t.reference),
        )
    }));
    Ok((best, report))
}

/// Most frequent reading per character in parallel training data (ties to
/// the smaller syllable).
pub fn memorize(chars: &[String], readings: &[Syllable]) -> Result<BTreeMap<String, Syllable>> {
    if chars.len() != readings.len() {
        return Err(Error::LengthMismatch(chars.len(), readings.len()));
    }
    let mut counts: HashMap<&str, HashMap<&Syllable, usize>> = HashMap::new();
    for (c, s) in chars.iter().zip(readings) {
        *counts.entry(c).or_default().entry(s).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(c, m)| {
            let best = m
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(s, _)| s.clone())
                .expect("non-empty");
            (c.to_owned(), best)
        })
        .collect())
}

/// Memorizes the training data, then scores the test stream; unseen
/// characters are wrong.
pub fn memorize_pronouncer(
    train_chars: &[String],
    train_readings: &[Syllable],
    test_chars: &[String],
    test_ref: &[Syllable],
) -> Result<EvalReport> {
    if test_chars.len() != test_ref.len() {
        return Err(Error::LengthMismatch(test_chars.len(), test_ref.len()));
    }
    let table = memorize(train_chars, train_readings)?;
    Ok(report_from(test_chars.iter().zip(test_ref).map(|(c, r)| {
        let h = table.get(c);
        (
            Item {
                char: c,
                hyp: h,
                reference: r,
                weight: 1.0,
            },
            credit(h, r),
        )
    })))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentVariant {
    /// Reading of the second component.
    Match1,
    /// Credit whichever of the two components' readings scores better.
    Match2,
}

impl FromStr for ComponentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "match1" => Ok(ComponentVariant::Match1),
            "match2" => Ok(ComponentVariant::Match2),
            _ => Err(Error::Config(format!("unknown component variant {s:?}"))),
        }
    }
}

/// Guesses each test character's reading from the known reading of one of
/// its components. Components without a known reading, and atomic
/// characters, are scored wrong.
pub fn component_predict(
    known: &BTreeMap<String, Syllable>,
    test: &[TestChar],
    table: &DecompositionTable,
    variant: ComponentVariant,
    level: Level,
) -> EvalReport {
    let lookup = |part: Option<char>| part.and_then(|p| known.get(p.encode_utf8(&mut [0; 4]) as &str));
    report_from(test.iter().map(|t| {
        let c = t.char.chars().next();
        let d = c.map(|c| table.decompose(c));
        let p2 = d.and_then(|d| lookup(d.part2()));
        let (hyp, ok) = match variant {
            ComponentVariant::Match1 => (p2, credit(p2, &t.reference)),
            ComponentVariant::Match2 => {
                let p1 = d.and_then(|d| lookup(d.part1()));
                let a = credit(p1, &t.reference);
                let b = credit(p2, &t.reference);
                let ok = [a[0] || b[0], a[1] || b[1], a[2] || b[2]];
                // report the prediction that earned the best credit
                let hyp = if b.iter().filter(|x| **x).count() >= a.iter().filter(|x| **x).count() && p2.is_some() {
                    p2
                } else {
                    p1.or(p2)
                };
                (hyp, ok)
            }
        };
        (
            Item {
                char: &t.char,
                hyp,
                reference: &t.reference,
                weight: weight(t, level),
            },
            ok,
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syl(s: &str) -> Syllable {
        Syllable::parse(s).unwrap()
    }

    fn syls(s: &str) -> Vec<Syllable> {
        s.split_whitespace().map(syl).collect()
    }

    #[test]
    fn hao_for_mao_is_partial_credit_only() {
        let (h, r) = (syl("hào"), syl("mào"));
        assert!(!matches(&h, &r, EvalMode::ExactTone));
        assert!(!matches(&h, &r, EvalMode::ExactNoTone));
        assert!(matches(&h, &r, EvalMode::Partial));
    }

    #[test]
    fn tone_only_difference() {
        let (h, r) = (syl("hào"), syl("hǎo"));
        assert!(!matches(&h, &r, EvalMode::ExactTone));
        assert!(matches(&h, &r, EvalMode::ExactNoTone));
        assert!(matches(&h, &r, EvalMode::Partial));
    }

    #[test]
    fn identical_streams_score_one() {
        let a = syls("zhong4 yao4 de5 lu:4");
        for m in EvalMode::ALL {
            assert_eq!(token_accuracy(&a, &a, m).unwrap(), 1.0);
        }
        assert!(token_accuracy(&a, &a[1..], EvalMode::Partial).is_err());
    }

    #[test]
    fn partial_needs_onset_or_rime() {
        assert!(matches(&syl("zhang"), &syl("zhong"), EvalMode::Partial));
        assert!(matches(&syl("bang"), &syl("zhang"), EvalMode::Partial));
        assert!(!matches(&syl("bing"), &syl("zhang"), EvalMode::Partial));
    }

    #[test]
    fn report_breaks_down_errors() {
        let chars: Vec<String> = ["耗", "耗", "要"].iter().map(|s| s.to_string()).collect();
        let r = evaluate(&chars, &syls("mao4 hao4 yao1"), &syls("hao4 hao4 yao4")).unwrap();
        assert_eq!(r.tokens, 3);
        assert_eq!(r.exact_tone, 1.0 / 3.0);
        assert_eq!(r.exact_no_tone, 2.0 / 3.0);
        assert_eq!(r.partial, 1.0);
        assert_eq!(r.per_char["耗"], CharErrors { total: 2.0, wrong: 1.0 });
        assert!(r.to_tsv().contains("error\t耗\t1\t2"));
    }

    fn tc(c: &str, r: &str, n: u64) -> TestChar {
        TestChar {
            char: c.into(),
            reference: syl(r),
            count: n,
        }
    }

    #[test]
    fn majority_baseline_counts_class_frequency() {
        let train = syls("yu4 yu4 shi4 de5");
        let test = vec![tc("a", "yu4", 1), tc("b", "yu2", 3), tc("c", "shi4", 1), tc("d", "yu4", 5)];
        let (best, r) = majority_baseline(&train, &test, Level::Type).unwrap();
        assert_eq!(best, syl("yu4"));
        assert_eq!(r.exact_tone, 0.5);
        assert_eq!(r.exact_no_tone, 0.75);
        let (_, t) = majority_baseline(&train, &test, Level::Token).unwrap();
        assert_eq!(t.exact_tone, 6.0 / 10.0);
        assert!(majority_baseline(&[], &test, Level::Type).is_err());
    }

    #[test]
    fn memorizer_caps_heteronyms_at_majority_share() {
        // one character read 60/40 between two syllables
        let mut chars = Vec::new();
        let mut reads = Vec::new();
        for i in 0..100 {
            chars.push("了".to_string());
            reads.push(if i % 5 < 3 { syl("le5") } else { syl("liao3") });
        }
        let r = memorize_pronouncer(&chars, &reads, &chars, &reads).unwrap();
        assert!((r.exact_tone - 0.6).abs() < 1e-12);
        let unseen = memorize_pronouncer(&chars, &reads, &["好".to_string()], &[syl("hao3")]).unwrap();
        assert_eq!(unseen.partial, 0.0);
    }

    #[test]
    fn component_guess_for_hao() {
        let mut t = DecompositionTable::new();
        t.insert('耗', '耒', Some('毛'));
        t.insert('他', '亻', Some('也'));
        t.insert('一', '一', None);
        let known: BTreeMap<String, Syllable> =
            [("毛", "mao2"), ("耒", "lei3"), ("亻", "ren2"), ("也", "ye3")].iter().map(|(c, s)| (c.to_string(), syl(s))).collect();
        let test = vec![tc("耗", "hao4", 1), tc("他", "ta1", 1), tc("一", "yi1", 1)];
        let m1 = component_predict(&known, &test[..1], &t, ComponentVariant::Match1, Level::Type);
        assert_eq!((m1.exact_no_tone, m1.partial), (0.0, 1.0));
        let all = component_predict(&known, &test, &t, ComponentVariant::Match1, Level::Type);
        assert_eq!(all.tokens, 3);
        assert!((all.partial - 1.0 / 3.0).abs() < 1e-12);
        let m2 = component_predict(&known, &test, &t, ComponentVariant::Match2, Level::Type);
        assert!(m2.partial >= all.partial && m2.is_ordered());
    }

    proptest! {
        #[test]
        fn modes_are_ordered_and_exact_is_symmetric(
            a in proptest::collection::vec((0usize..6, 0u8..5), 1..30),
            b in proptest::collection::vec((0usize..6, 0u8..5), 1..30),
        ) {
            const BASES: [&str; 6] = ["hao", "mao", "hai", "zhong", "zhang", "yu"];
            let n = a.len().min(b.len());
            let h: Vec<Syllable> = a[..n].iter().map(|&(i, t)| Syllable::new(BASES[i], t).unwrap()).collect();
            let r: Vec<Syllable> = b[..n].iter().map(|&(i, t)| Syllable::new(BASES[i], t).unwrap()).collect();
            let acc = EvalMode::ALL.map(|m| token_accuracy(&h, &r, m).unwrap());
            prop_assert!(acc[0] <= acc[1] && acc[1] <= acc[2]);
            for m in [EvalMode::ExactTone, EvalMode::ExactNoTone] {
                prop_assert_eq!(token_accuracy(&h, &r, m).unwrap(), token_accuracy(&r, &h, m).unwrap());
            }
        }
    }
}
