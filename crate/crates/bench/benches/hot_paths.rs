use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use decipher_bench::{corpora, corpus};
use decipher_core::channel::{expectation, init_channel, EmConfig};
use decipher_core::decoder::{DecodeConfig, Decoder};
use decipher_core::symbols::count_ngrams_par;
use decipher_core::{count_ngrams, Domain, SymbolTable, TokenStream};

fn e_step(c: &mut Criterion) {
    let (corp, _) = corpora(200_000, 0);
    let mut group = c.benchmark_group("e_step");
    group.sample_size(10);
    for size in [2_000usize, 10_000] {
        let cfg = EmConfig {
            n: size,
            m: size,
            ..Default::default()
        };
        let problem = corp.problem(&cfg).unwrap();
        let channel = init_channel(&corp.chars, &corp.syllables, &cfg, 0).unwrap();
        for parallel in [false, true] {
            let id = BenchmarkId::new(if parallel { "parallel" } else { "serial" }, size);
            group.bench_with_input(id, &size, |b, _| b.iter(|| expectation(black_box(&problem), &channel, parallel)));
        }
    }
    group.finish();
}

fn viterbi(c: &mut Criterion) {
    let (corp, chars) = corpora(200_000, 0);
    let cfg = EmConfig::default();
    let channel = init_channel(&corp.chars, &corp.syllables, &cfg, 0).unwrap();
    let dec = Decoder::new(&corp.bigram, &channel, DecodeConfig::default()).unwrap();
    // corpus lines are short; decode a fixed-length stretch instead
    let text: String = chars.concat().chars().take(200).collect();
    let encoded = dec.encode_line(&text);
    let mut group = c.benchmark_group("viterbi");
    group.bench_function(BenchmarkId::new("exact", encoded.len()), |b| b.iter(|| dec.viterbi(black_box(&encoded))));
    let beamed = Decoder::new(
        &corp.bigram,
        &channel,
        DecodeConfig {
            beam: 10,
            ..Default::default()
        },
    )
    .unwrap();
    group.bench_function(BenchmarkId::new("beam10", encoded.len()), |b| {
        b.iter(|| beamed.viterbi(black_box(&encoded)))
    });
    group.finish();
}

fn counting(c: &mut Criterion) {
    let (chars, _) = corpus(1_000_000, 1);
    let mut table = SymbolTable::new();
    let stream = TokenStream::from_text(Domain::Character, chars.iter().map(String::as_str), &mut table);
    let mut group = c.benchmark_group("count_trigrams");
    group.sample_size(10);
    group.bench_function("serial", |b| b.iter(|| count_ngrams(black_box(&stream), 3).unwrap()));
    group.bench_function("parallel", |b| b.iter(|| count_ngrams_par(black_box(&stream), 3).unwrap()));
    group.finish();
}

criterion_group!(benches, e_step, viterbi, counting);
criterion_main!(benches);
