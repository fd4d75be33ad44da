#![allow(dead_code)]

use std::time::Instant;

use decipher_core::channel::{em_train_restarts, EmConfig, EmProblem, EmRun};
use decipher_core::decoder::{viterbi_decode, DecodeConfig};
use decipher_core::symbols::count_ngrams_padded;
use decipher_core::synth::SynthCorpus;
use decipher_core::*;

pub struct Setup {
    pub chars: SymbolTable,
    pub syllables: SymbolTable,
    pub problem: EmProblem,
    pub bigram: NgramLM,
}

pub fn setup(corpus: &SynthCorpus, order: usize, n: usize, m: usize, prune: u64) -> Setup {
    let mut chars = SymbolTable::new();
    let cstream = TokenStream::from_text(Domain::Character, corpus.char_lines.iter().map(String::as_str), &mut chars);
    let text = corpus.syllable_text(false);
    let mut syllables = SymbolTable::new();
    let sstream = TokenStream::from_text(Domain::Syllable, text.iter().map(String::as_str), &mut syllables);
    let ccounts = count_ngrams(&cstream, order).unwrap();
    let scounts = count_ngrams(&sstream, order).unwrap().pruned(prune);
    let lm = train_lm(&scounts, &syllables, Smoothing::None).unwrap();
    let prior = lm.prior(m).unwrap();
    let problem = EmProblem::new(&ccounts, &chars, &prior, &syllables, n).unwrap();
    let bigram = train_lm(&count_ngrams_padded(&sstream, 2).unwrap(), &syllables, Smoothing::Additive(0.1)).unwrap();
    Setup { chars, syllables, problem, bigram }
}

pub fn train(s: &Setup, cfg: &EmConfig) -> (Vec<EmRun>, usize) {
    let t = Instant::now();
    let out = em_train_restarts(&s.problem, cfg, None).unwrap();
    eprintln!("em: {:.1}s", t.elapsed().as_secs_f64());
    out
}

/// Toneless decoded readings of the test slice.
pub fn decode_test(s: &Setup, run: &EmRun, corpus: &SynthCorpus, exponent: f64) -> Vec<String> {
    let cfg = DecodeConfig { exponent, ..Default::default() };
    let mut out = Vec::new();
    for line in &corpus.test.lines {
        let ids: Vec<Option<SymbolId>> = line.chars().map(|c| run.channel.chars().get(&c.to_string())).collect();
        let d = viterbi_decode(&ids, &s.bigram, &run.channel, cfg).unwrap();
        out.extend(d.syllables.iter().map(|&p| s.bigram.vocab().resolve(p).to_owned()));
    }
    out
}

pub fn accuracy_no_tone(pred: &[String], corpus: &SynthCorpus) -> f64 {
    let gold = corpus.test.gold_flat();
    assert_eq!(pred.len(), gold.len());
    let ok = pred.iter().zip(&gold).filter(|(p, g)| p.as_str() == g.base()).count();
    ok as f64 / gold.len() as f64
}
