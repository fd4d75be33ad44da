use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use decipher_core::channel::{resolve_hints, ChannelTable, EmConfig, EmMode};
use decipher_core::combine::{embed_words, ConfidentPairs, Corpora};
use decipher_core::decoder::DecodeConfig;
use decipher_core::embed::EmbedConfig;
use decipher_core::eval::{evaluate, EvalMode};
use decipher_core::pinyinizer::{pinyinize_lines, PronDictionary};
use decipher_core::pipeline::{
    agreement_tsv, channel_tsv, decode_lines, distill_from, load_vectors, parse_syllable_file, restarts_tsv, run,
    split_words, train_em, RunConfig, KEYS,
};
use decipher_core::synth::{gen_cipher_corpus, LmSource, SynthConfig};
use decipher_core::vecmap::{map_words, self_learn_map, MapWordsConfig, MappingMatrix, VecmapConfig, WordPronTable};
use decipher_core::{
    count_ngrams, count_ngrams_padded, top_k, train_lm, DecompositionTable, Domain, NgramLM, Smoothing, SymbolTable,
    TokenStream,
};

#[derive(Parser)]
#[command(name = "decipher", version, about = "Unsupervised pronunciation of written text from unrelated speech transcripts")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Longest-match dictionary conversion of character text to pinyin.
    Pinyinize(PinyinizeArgs),
    /// N-gram counts of a corpus.
    Count(CountArgs),
    /// Train an n-gram language model on a syllable corpus.
    TrainLm(TrainLmArgs),
    /// Learn a syllable-to-character channel with EM.
    EmTrain(EmArgs),
    /// Viterbi pronunciation of character text.
    Decode(DecodeArgs),
    /// Skip-gram embeddings of a whitespace-tokenized corpus.
    Embed(EmbedArgs),
    /// Align written and spoken word vectors and map words to pronunciations.
    Vecmap(VecmapArgs),
    /// Pairs on which EM and the vector mapping agree.
    Distill(DistillArgs),
    /// Accuracy of a pronunciation against a reference.
    Eval(EvalArgs),
    /// Generate a synthetic cipher corpus with its answer key.
    Synth(SynthArgs),
    /// Run a whole configured pipeline.
    Run(RunArgs),
}

#[derive(Args)]
struct PinyinizeArgs {
    #[arg(long)]
    dict: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strip_tones: bool,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// char | syllable | word
    #[arg(long, default_value = "syllable")]
    domain: String,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Keep only the most frequent n-grams.
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// none | add:δ
    #[arg(long, default_value = "add:0.1")]
    smoothing: String,
    /// Count without sentence-start padding.
    #[arg(long)]
    no_pad: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmArgs {
    #[arg(long)]
    char_corpus: PathBuf,
    #[arg(long)]
    pinyin_corpus: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// flat | factored | pair
    #[arg(long, default_value = "flat")]
    mode: String,
    /// char<TAB>syllable pairs seeding the initial table.
    #[arg(long)]
    hints: Option<PathBuf>,
    /// Decomposition table (factored mode).
    #[arg(long)]
    decomp: Option<PathBuf>,
    /// Pair mode: drop syllable pairs seen fewer times.
    #[arg(long, default_value_t = 1)]
    prune: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-restart objectives.
    #[arg(long)]
    restarts_out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    channel: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    exponent: f64,
    /// States kept per position; 0 is exact search.
    #[arg(long, default_value_t = 0)]
    beam: usize,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negative: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Hogwild-style multithreaded training (not reproducible).
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct VecmapArgs {
    #[arg(long)]
    src_vec: PathBuf,
    #[arg(long)]
    tgt_vec: PathBuf,
    /// char<TAB>syllable pairs every chosen pronunciation must respect.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Reuse a mapping instead of learning one.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Where to write the learned mapping.
    #[arg(long)]
    mapping_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    csls_k: usize,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    channel: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Unconstrained word pronunciation table.
    #[arg(long)]
    table: PathBuf,
    /// Segmented character corpus.
    #[arg(long)]
    chars_seg: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    held_in: usize,
    #[arg(long, default_value_t = 3.0)]
    exponent: f64,
    #[arg(long)]
    out: PathBuf,
    /// Agreement counts by type and by token.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Test characters, for per-character error counts.
    #[arg(long)]
    chars: Option<PathBuf>,
    /// all | exact-tone | exact-no-tone | partial
    #[arg(long, default_value = "all")]
    mode: String,
    /// Report file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// trigram | words
    #[arg(long, default_value = "trigram")]
    source: String,
    #[arg(long, default_value_t = 5.0)]
    concentration: f64,
    #[arg(long, default_value_t = 50)]
    syllables: usize,
    #[arg(long, default_value_t = 200)]
    characters: usize,
    #[arg(long, default_value_t = 0.05)]
    heteronym_fraction: f64,
    #[arg(long, default_value_t = 200_000)]
    char_tokens: usize,
    #[arg(long, default_value_t = 200_000)]
    syllable_tokens: usize,
    #[arg(long, default_value_t = 2_000)]
    test_tokens: usize,
    #[arg(long, default_value_t = 400)]
    words: usize,
    /// Share of characters carrying a phonetic component (0 = none).
    #[arg(long, default_value_t = 0.0)]
    phonetic_components: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// List the configuration keys and exit.
    #[arg(long)]
    keys: bool,
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write(p: &Path, body: &str) -> Result<()> {
    fs::write(p, body).with_context(|| format!("writing {}", p.display()))
}

fn lines(p: &Path) -> Result<Vec<String>> {
    Ok(read(p)?.lines().map(str::to_owned).collect())
}

fn body(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn pinyinize(a: PinyinizeArgs) -> Result<()> {
    let dict = PronDictionary::from_tsv(&read(&a.dict)?)?;
    if dict.skipped() > 0 {
        log::warn!("{} dictionary lines skipped", dict.skipped());
    }
    let (out, coverage) = pinyinize_lines(&lines(&a.input)?, &dict);
    log::info!("coverage {coverage:.4}");
    let rendered: Vec<String> = out.iter().map(|p| p.render(a.strip_tones)).collect();
    write(&a.out, &body(&rendered))
}

fn count(a: CountArgs) -> Result<()> {
    let domain: Domain = a.domain.parse()?;
    let text = lines(&a.input)?;
    let mut table = SymbolTable::new();
    let stream = TokenStream::from_text(domain, text.iter().map(String::as_str), &mut table);
    let counts = count_ngrams(&stream, a.order)?;
    let out = match a.top {
        None => counts.to_tsv(&table),
        Some(k) => top_k(&counts, k)
            .iter()
            .map(|(g, c)| format!("{}\t{c}\n", table.render(g)))
            .collect(),
    };
    write(&a.out, &out)
}

fn train_lm_cmd(a: TrainLmArgs) -> Result<()> {
    let smoothing: Smoothing = a.smoothing.parse()?;
    let text = lines(&a.input)?;
    let mut vocab = SymbolTable::new();
    let stream = TokenStream::from_text(Domain::Syllable, text.iter().map(String::as_str), &mut vocab);
    let counts = if a.no_pad {
        count_ngrams(&stream, a.order)?
    } else {
        count_ngrams_padded(&stream, a.order)?
    };
    write(&a.out, &train_lm(&counts, &vocab, smoothing)?.to_tsv())
}

fn em_train(a: EmArgs, seed: u64) -> Result<()> {
    let mode: EmMode = a.mode.parse()?;
    let corpora = Corpora::new(&lines(&a.char_corpus)?, &lines(&a.pinyin_corpus)?, Smoothing::default())?;
    let hints = match &a.hints {
        Some(p) => {
            let pairs = ConfidentPairs::from_tsv(&read(p)?)?;
            resolve_hints(&pairs.to_vec(), &corpora.chars, &corpora.syllables)?
        }
        None => Vec::new(),
    };
    let cfg = EmConfig {
        n: a.n,
        m: a.m,
        iterations: a.iters,
        restarts: a.restarts,
        seed,
        mode,
        hints,
        prune_threshold: a.prune,
        parallel: true,
        ..Default::default()
    };
    let decomp = a.decomp.as_deref().map(|p| read(p).and_then(|t| Ok(DecompositionTable::from_tsv(&t)?))).transpose()?;
    let (runs, best) = train_em(&corpora, &cfg, decomp.as_ref())?;
    for r in &runs {
        for w in &r.warnings {
            log::warn!("restart {}: {w}", r.restart);
        }
        log::info!("restart {}: final loglik {}", r.restart, r.trace.final_value());
    }
    write(&a.out, &channel_tsv(&runs[best], &cfg))?;
    if let Some(p) = &a.restarts_out {
        write(p, &restarts_tsv(&runs, best))?;
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let lm = NgramLM::from_tsv(&read(&a.lm)?)?;
    let (channel, _) = ChannelTable::from_tsv(&read(&a.channel)?)?;
    let cfg = DecodeConfig {
        exponent: a.exponent,
        beam: a.beam,
        ..Default::default()
    };
    write(&a.out, &body(&decode_lines(&lm, &channel, &lines(&a.input)?, cfg)?))
}

fn embed(a: EmbedArgs, seed: u64) -> Result<()> {
    let cfg = EmbedConfig {
        dim: a.dim,
        window: a.window,
        negative: a.negative,
        epochs: a.epochs,
        min_count: a.min_count,
        seed,
        deterministic: !a.parallel,
        ..Default::default()
    };
    let m = embed_words(&split_words(&lines(&a.input)?), &cfg)?;
    write(&a.out, &m.to_text())
}

fn vecmap(a: VecmapArgs, seed: u64) -> Result<()> {
    let x = load_vectors(&a.src_vec)?;
    let z = load_vectors(&a.tgt_vec)?;
    let w = match &a.mapping {
        Some(p) => MappingMatrix::from_text(&read(p)?)?,
        None => {
            let cfg = VecmapConfig {
                csls_k: a.csls_k,
                patience: a.patience,
                seed,
                ..Default::default()
            };
            let r = self_learn_map(&x, &z, &cfg)?;
            for w in &r.warnings {
                log::warn!("{w}");
            }
            log::info!("self-learning: {} iterations, objective {:.6}", r.iterations, r.objective);
            r.mapping
        }
    };
    if let Some(p) = &a.mapping_out {
        write(p, &w.to_text())?;
    }
    let constraints = match &a.constraints {
        Some(p) => ConfidentPairs::from_tsv(&read(p)?)?,
        None => ConfidentPairs::default(),
    };
    let cfg = MapWordsConfig {
        csls_k: a.csls_k,
        ..Default::default()
    };
    write(&a.out, &map_words(&x, &z, &w, &constraints, &cfg)?.to_tsv())
}

fn distill(a: DistillArgs) -> Result<()> {
    let lm = NgramLM::from_tsv(&read(&a.lm)?)?;
    let (channel, _) = ChannelTable::from_tsv(&read(&a.channel)?)?;
    let table = WordPronTable::from_tsv(&read(&a.table)?)?;
    let words = split_words(&lines(&a.chars_seg)?);
    let decode = DecodeConfig {
        exponent: a.exponent,
        ..Default::default()
    };
    let (pairs, stats) = distill_from(&lm, &channel, &table, &words, a.held_in, decode, &MapWordsConfig::default())?;
    log::info!(
        "agreement: {}/{} types, {}/{} tokens",
        stats.types_agreed,
        stats.types_compared,
        stats.tokens_agreed,
        stats.tokens_compared
    );
    write(&a.out, &pairs.to_tsv())?;
    if let Some(p) = &a.stats {
        write(p, &agreement_tsv(&stats))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let hyp = parse_syllable_file(&a.hyp)?;
    let reference = parse_syllable_file(&a.reference)?;
    let chars: Vec<String> = match &a.chars {
        Some(p) => read(p)?.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        None => vec!["?".to_owned(); reference.len()],
    };
    let report = evaluate(&chars, &hyp, &reference)?;
    let out = if a.mode == "all" {
        report.to_tsv()
    } else {
        let mode: EvalMode = a.mode.parse()?;
        format!("tokens\t{}\n{}\t{:.6}\n", report.tokens, mode.as_str(), report.accuracy(mode))
    };
    match &a.out {
        Some(p) => write(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let source = match a.source.as_str() {
        "trigram" => LmSource::Trigram {
            concentration: a.concentration,
        },
        "words" => LmSource::Words,
        s => bail!("unknown source {s:?} (trigram | words)"),
    };
    let cfg = SynthConfig {
        source,
        syllables: a.syllables,
        characters: a.characters,
        heteronym_fraction: a.heteronym_fraction,
        char_tokens: a.char_tokens,
        syllable_tokens: a.syllable_tokens,
        test_tokens: a.test_tokens,
        words: a.words,
        phonetic_components: a.phonetic_components,
        seed,
        ..Default::default()
    };
    gen_cipher_corpus(&cfg)?.write_to_dir(&a.out_dir)?;
    Ok(())
}

fn run_cmd(a: RunArgs, seed: Option<u64>) -> Result<()> {
    if a.keys {
        for (k, d, doc) in KEYS {
            println!("{k:<26} {:<10} {doc}", if d.is_empty() { "-" } else { d });
        }
        return Ok(());
    }
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string())?;
    }
    for kv in &a.sets {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let m = run(&cfg)?;
    for s in &m.stages {
        println!("{:<10} {}", s.name, if s.executed { format!("ran in {:.1}s", s.seconds) } else { "unchanged".into() });
    }
    if let Some(i) = m.selected_restart {
        println!("selected restart {i} (loglik {})", m.restarts[i]);
    }
    println!("manifest: {}", cfg.out_dir().join("manifest.json").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Pinyinize(a) => pinyinize(a),
        Cmd::Count(a) => count(a),
        Cmd::TrainLm(a) => train_lm_cmd(a),
        Cmd::EmTrain(a) => em_train(a, seed),
        Cmd::Decode(a) => decode(a),
        Cmd::Embed(a) => embed(a, seed),
        Cmd::Vecmap(a) => vecmap(a, seed),
        Cmd::Distill(a) => distill(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Synth(a) => synth(a, seed),
        Cmd::Run(a) => {
            // only an explicit --seed overrides the config file
            let explicit = std::env::args().any(|x| x == "--seed" || x.starts_with("--seed="));
            run_cmd(a, explicit.then_some(seed))
        }
    }
}
