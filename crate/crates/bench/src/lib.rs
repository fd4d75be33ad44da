//! Shared fixtures for the benchmarks.

use decipher_core::combine::Corpora;
use decipher_core::synth::{gen_cipher_corpus, SynthConfig};
use decipher_core::Smoothing;

/// Character lines and toneless syllable lines of a default synthetic corpus
/// scaled to `tokens` tokens per side.
pub fn corpus(tokens: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let cfg = SynthConfig {
        char_tokens: tokens,
        syllable_tokens: tokens,
        seed,
        ..Default::default()
    };
    let c = gen_cipher_corpus(&cfg).expect("synthetic corpus");
    (c.char_lines.clone(), c.syllable_text(false))
}

pub fn corpora(tokens: usize, seed: u64) -> (Corpora, Vec<String>) {
    let (chars, syllables) = corpus(tokens, seed);
    let c = Corpora::new(&chars, &syllables, Smoothing::default()).expect("corpora");
    (c, chars)
}
