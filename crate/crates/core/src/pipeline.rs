//! Staged runs. A run is described by one flat `key = value` file; each
//! stage reads files, writes files, and is skipped on a rerun when the
//! digest of its inputs and parameters matches the previous manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{
    em_train_restarts, resolve_hints, ChannelMeta, ChannelTable, Components, EmConfig, EmMode, EmRun, LikelihoodTrace,
};
use crate::combine::{
    distill_agreements, embed_words, held_in_lines, line_chars, majority_votes, AgreementStats, ConfidentPairs, Corpora,
};
use crate::decoder::{DecodeConfig, Decoder};
use crate::embed::{EmbedConfig, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::lm::{train_lm, NgramLM, Smoothing};
use crate::phonology::{DecompositionTable, Syllable};
use crate::pinyinizer::{pinyinize_lines, PronDictionary};
use crate::symbols::{count_ngrams, count_ngrams_padded, Domain, SymbolTable, TokenStream};
use crate::synth::{gen_cipher_corpus, LmSource, SynthConfig};
use crate::vecmap::{map_words, project_to_characters, self_learn_map, MapWordsConfig, MappingMatrix, VecmapConfig, WordPronTable};

/// Environment variable naming the scratch directory used when a config
/// sets no `out` key.
pub const SCRATCH_ENV: &str = "DECIPHER_SCRATCH";

/// Index of the trace with the highest final log-likelihood; ties go to
/// the lowest index.
pub fn select_best_restart(traces: &[&LikelihoodTrace]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in traces.iter().enumerate() {
        let v = t.final_value();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::Empty("restart traces"))
}

/// Every key a run config may set, with its default ("" = unset) and a
/// one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out", "", "output directory (default: $DECIPHER_SCRATCH/run, else ./decipher-run)"),
    ("seed", "0", "seed for synthesis, EM, embeddings and mapping"),
    ("synth", "false", "generate synthetic corpora instead of reading files"),
    ("synth.source", "trigram", "trigram | words"),
    ("synth.syllables", "50", "syllable types"),
    ("synth.characters", "200", "character types"),
    ("synth.heteronym_fraction", "0.05", "share of characters with a second reading"),
    ("synth.char_tokens", "200000", "character corpus size"),
    ("synth.syllable_tokens", "200000", "syllable corpus size"),
    ("synth.test_tokens", "2000", "test slice size"),
    ("synth.words", "400", "lexicon size (words source)"),
    ("synth.concentration", "5", "trigram Dirichlet concentration (trigram source)"),
    ("chars", "", "character corpus, one sentence per line"),
    ("chars_seg", "", "the same corpus segmented into words (enables the vector method)"),
    ("spoken", "", "independent character text to pinyinize with `dict`"),
    ("dict", "", "pronunciation dictionary: word<TAB>syl1 syl2 …"),
    ("syllables", "", "pinyin corpus (alternative to spoken + dict)"),
    ("syllables_seg", "", "pinyin corpus with words joined by '-'"),
    ("test", "", "test characters, one line per sentence"),
    ("test_seg", "", "test characters segmented into words"),
    ("test_ref", "", "reference pronunciations of the test lines"),
    ("decomp", "", "character decomposition table (factored EM)"),
    ("vector", "auto", "run the vector method: auto | true | false"),
    ("em.n", "10000", "top character n-grams"),
    ("em.m", "10000", "top syllable n-grams"),
    ("em.iterations", "50", "EM iterations"),
    ("em.restarts", "5", "random restarts"),
    ("em.mode", "flat", "flat | factored | pair"),
    ("em.prune", "1", "pair mode: minimum syllable pair count"),
    ("lm.smoothing", "add:0.1", "decoding bigram smoothing: none | add:δ"),
    ("decode.exponent", "3", "channel exponent"),
    ("decode.beam", "0", "states kept per position (0 = exact)"),
    ("embed.dim", "300", "vector width"),
    ("embed.window", "5", "context window"),
    ("embed.negative", "5", "negative samples"),
    ("embed.epochs", "5", "training epochs"),
    ("embed.min_count", "5", "minimum token count"),
    ("vecmap.csls_k", "10", "CSLS neighbourhood"),
    ("vecmap.patience", "50", "iterations without improvement before raising the keep probability"),
    ("vecmap.max_iterations", "2000", "self-learning iteration cap"),
    ("distill.held_in", "100000", "characters of the corpus decoded for votes"),
];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|k| k.0 == key).map(|k| k.1)
}

/// Flat `key = value` run configuration. Relative paths resolve against the
/// directory of the file it was read from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    base: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("run config", i + 1, "expected key = value"))?;
            let k = k.trim();
            if cfg.values.contains_key(k) {
                return Err(Error::parse("run config", i + 1, format!("duplicate key {k}")));
            }
            cfg.set(k, v.trim()).map_err(|e| Error::parse("run config", i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Sets or overrides a key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    /// The explicitly set value, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Effective value: explicit, else the default.
    fn raw(&self, key: &str) -> &str {
        self.get(key).or_else(|| default_of(key)).expect("known key")
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        if v.is_empty() {
            return None;
        }
        let p = PathBuf::from(v);
        Some(match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        if let Some(p) = self.path("out") {
            return p;
        }
        match std::env::var_os(SCRATCH_ENV) {
            Some(s) => PathBuf::from(s).join("run"),
            None => PathBuf::from("decipher-run"),
        }
    }

    /// Explicit keys, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn params(&self, prefixes: &[&str]) -> Vec<(String, String)> {
        KEYS.iter()
            .filter(|k| prefixes.iter().any(|p| k.0 == *p || k.0.starts_with(&format!("{p}."))))
            .map(|k| (k.0.to_owned(), self.raw(k.0).to_owned()))
            .collect()
    }

    fn em_config(&self) -> Result<EmConfig> {
        Ok(EmConfig {
            n: self.value("em.n")?,
            m: self.value("em.m")?,
            iterations: self.value("em.iterations")?,
            restarts: self.value("em.restarts")?,
            seed: self.value("seed")?,
            mode: self.value("em.mode")?,
            prune_threshold: self.value("em.prune")?,
            parallel: true,
            ..Default::default()
        })
    }

    fn decode_config(&self) -> Result<DecodeConfig> {
        Ok(DecodeConfig {
            exponent: self.value("decode.exponent")?,
            beam: self.value("decode.beam")?,
            ..Default::default()
        })
    }

    fn embed_config(&self) -> Result<EmbedConfig> {
        Ok(EmbedConfig {
            dim: self.value("embed.dim")?,
            window: self.value("embed.window")?,
            negative: self.value("embed.negative")?,
            epochs: self.value("embed.epochs")?,
            min_count: self.value("embed.min_count")?,
            seed: self.value("seed")?,
            ..Default::default()
        })
    }

    fn vecmap_config(&self) -> Result<VecmapConfig> {
        Ok(VecmapConfig {
            csls_k: self.value("vecmap.csls_k")?,
            patience: self.value("vecmap.patience")?,
            max_iterations: self.value("vecmap.max_iterations")?,
            seed: self.value("seed")?,
            ..Default::default()
        })
    }

    fn map_config(&self) -> Result<MapWordsConfig> {
        Ok(MapWordsConfig {
            csls_k: self.value("vecmap.csls_k")?,
            ..Default::default()
        })
    }

    fn synth_config(&self) -> Result<SynthConfig> {
        let source = match self.raw("synth.source") {
            "trigram" => LmSource::Trigram {
                concentration: self.value("synth.concentration")?,
            },
            "words" => LmSource::Words,
            s => return Err(Error::Config(format!("unknown synth source {s:?} (trigram | words)"))),
        };
        Ok(SynthConfig {
            source,
            syllables: self.value("synth.syllables")?,
            characters: self.value("synth.characters")?,
            heteronym_fraction: self.value("synth.heteronym_fraction")?,
            char_tokens: self.value("synth.char_tokens")?,
            syllable_tokens: self.value("synth.syllable_tokens")?,
            test_tokens: self.value("synth.test_tokens")?,
            words: self.value("synth.words")?,
            seed: self.value("seed")?,
            ..Default::default()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StageStatus {
    Completed,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// sha256 over the stage name, its parameters and its input digests.
    pub input_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub status: StageStatus,
    /// False when the stage was skipped because nothing changed.
    pub executed: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    /// Final log-likelihood of each EM restart.
    pub restarts: Vec<f64>,
    pub selected_restart: Option<usize>,
    pub hinted_restarts: Vec<f64>,
    pub hinted_selected_restart: Option<usize>,
    pub complete: bool,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Names of stages that actually ran in this invocation.
    pub fn executed(&self) -> Vec<&str> {
        self.stages.iter().filter(|s| s.executed).map(|s| s.name.as_str()).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?.lines().map(str::to_owned).collect())
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn lines_body<S: AsRef<str>>(lines: &[S]) -> String {
    lines.iter().map(|l| format!("{}\n", l.as_ref())).collect()
}

fn name_of(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

struct Runner {
    out: PathBuf,
    previous: Option<RunManifest>,
    manifest: RunManifest,
}

impl Runner {
    fn manifest_path(&self) -> PathBuf {
        self.out.join(RunManifest::FILE)
    }

    fn stage(
        &mut self,
        name: &str,
        inputs: &[&Path],
        params: Vec<(String, String)>,
        outputs: &[&Path],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let mut input_digests = BTreeMap::new();
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        for (k, v) in &params {
            h.update(format!("\0{k}={v}").as_bytes());
        }
        for p in inputs {
            let d = file_digest(p)?;
            h.update(format!("\0{}:{d}", p.display()).as_bytes());
            input_digests.insert(p.display().to_string(), d);
        }
        let digest = hex::encode(h.finalize());

        let unchanged = self.previous.as_ref().and_then(|m| m.stage(name)).filter(|rec| {
            rec.status == StageStatus::Completed
                && rec.input_digest == digest
                && outputs.iter().all(|p| {
                    let key = p.display().to_string();
                    rec.outputs.get(&key).is_some_and(|d| file_digest(p).ok().as_ref() == Some(d))
                })
        });
        if let Some(rec) = unchanged {
            log::info!("stage {name}: unchanged, skipped");
            let mut rec = rec.clone();
            rec.executed = false;
            rec.seconds = 0.0;
            self.manifest.stages.push(rec);
            return self.manifest.save(&self.manifest_path());
        }

        log::info!("stage {name}: running");
        let t = Instant::now();
        let result = body();
        let mut rec = StageRecord {
            name: name.to_owned(),
            input_digest: digest,
            inputs: input_digests,
            params: params.into_iter().collect(),
            outputs: BTreeMap::new(),
            status: StageStatus::Completed,
            executed: true,
            seconds: t.elapsed().as_secs_f64(),
        };
        let result = result.and_then(|()| {
            for p in outputs {
                rec.outputs.insert(p.display().to_string(), file_digest(p)?);
            }
            Ok(())
        });
        if let Err(e) = &result {
            rec.status = StageStatus::Failed(e.to_string());
        }
        self.manifest.stages.push(rec);
        self.manifest.save(&self.manifest_path())?;
        result.map_err(|e| Error::Stage {
            stage: name.to_owned(),
            msg: e.to_string(),
        })
    }
}

/// Resolved input files of a run.
struct Inputs {
    chars: PathBuf,
    chars_seg: Option<PathBuf>,
    syllables_src: Option<PathBuf>,
    spoken: Option<(PathBuf, PathBuf)>,
    syllables_seg: Option<PathBuf>,
    test: Option<PathBuf>,
    test_seg: Option<PathBuf>,
    test_ref: Option<PathBuf>,
    decomp: Option<PathBuf>,
}

/// `restart<TAB>loglik<TAB>selected` table with a header line.
pub fn restarts_tsv(runs: &[EmRun], best: usize) -> String {
    let mut out = String::from("restart\tloglik\tselected\n");
    for (i, r) in runs.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}", r.restart, r.trace.final_value(), u8::from(i == best));
    }
    out
}

/// Inverse of [`restarts_tsv`]: final log-likelihoods and the selected index.
pub fn parse_restarts(text: &str) -> Result<(Vec<f64>, Option<usize>)> {
    let mut lls = Vec::new();
    let mut sel = None;
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::parse("restarts file", i + 1, "expected restart<TAB>loglik<TAB>selected");
        if f.len() != 3 {
            return Err(bad());
        }
        lls.push(f[1].parse::<f64>().map_err(|_| bad())?);
        if f[2] == "1" {
            sel = Some(lls.len() - 1);
        }
    }
    Ok((lls, sel))
}

/// Serialized channel of one EM run with its header metadata.
pub fn channel_tsv(run: &EmRun, cfg: &EmConfig) -> String {
    run.channel.to_tsv(&ChannelMeta {
        mode: cfg.mode,
        lambdas: cfg.lambdas,
        iterations: cfg.iterations,
        loglik: run.trace.final_value(),
    })
}

/// All restarts on the given corpora and the index of the best one. Factored
/// mode needs a decomposition table.
pub fn train_em(corpora: &Corpora, cfg: &EmConfig, decomp: Option<&DecompositionTable>) -> Result<(Vec<EmRun>, usize)> {
    let problem = corpora.problem(cfg)?;
    let components = match (cfg.mode, decomp) {
        (EmMode::Factored, Some(t)) => Some(Components::new(&corpora.chars, t)),
        (EmMode::Factored, None) => return Err(Error::Config("factored EM needs a `decomp` file".into())),
        _ => None,
    };
    em_train_restarts(&problem, cfg, components.as_ref())
}

/// Viterbi readings, one space-separated line per input line.
pub fn decode_lines(lm: &NgramLM, channel: &ChannelTable, lines: &[String], cfg: DecodeConfig) -> Result<Vec<String>> {
    let dec = Decoder::new(lm, channel, cfg)?;
    Ok(lines
        .iter()
        .map(|l| {
            let d = dec.viterbi(&dec.encode_line(l));
            lm.vocab().render(&d.syllables)
        })
        .collect())
}

fn load_decomp(path: Option<&Path>) -> Result<Option<DecompositionTable>> {
    path.map(|p| DecompositionTable::from_tsv(&read(p)?)).transpose()
}

/// Per-character EM and vector votes over the held-in leading lines of a
/// segmented corpus, and the pairs on which they agree.
pub fn distill_from(
    lm: &NgramLM,
    channel: &ChannelTable,
    table: &WordPronTable,
    words: &[Vec<String>],
    held_in: usize,
    decode: DecodeConfig,
    map: &MapWordsConfig,
) -> Result<(ConfidentPairs, AgreementStats)> {
    let lines: Vec<String> = words.iter().map(|w| w.concat()).collect();
    let n = held_in_lines(&lines, held_in);
    let chars = line_chars(&lines[..n]);
    let em_read: Vec<String> = decode_lines(lm, channel, &lines[..n], decode)?
        .iter()
        .flat_map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .collect();
    let none = ConfidentPairs::default();
    let vec_read: Vec<String> = project_to_characters(table, &words[..n], &none, map)?.into_iter().flatten().collect();
    Ok(distill_agreements(&majority_votes(&chars, &em_read)?, &majority_votes(&chars, &vec_read)?))
}

/// `name<TAB>count` lines for the four agreement counts.
pub fn agreement_tsv(stats: &AgreementStats) -> String {
    format!(
        "types_compared\t{}\ntypes_agreed\t{}\ntokens_compared\t{}\ntokens_agreed\t{}\n",
        stats.types_compared, stats.types_agreed, stats.tokens_compared, stats.tokens_agreed
    )
}

/// Whitespace-separated tokens of each line.
pub fn split_words(lines: &[String]) -> Vec<Vec<String>> {
    lines.iter().map(|l| l.split_whitespace().map(str::to_owned).collect()).collect()
}

/// Reads a vector file; rows are normalized unless they already are unit
/// length.
pub fn load_vectors(path: &Path) -> Result<EmbeddingMatrix> {
    let mut m = EmbeddingMatrix::from_text(&read(path)?)?;
    if !m.is_normalized() {
        m.normalize();
    }
    Ok(m)
}

/// Executes every configured stage in order:
/// synth? → pinyinize → count → lm → em → [embed → vecmap → distill → rerun]
/// → decode → eval. The manifest is written after every stage, so a failed
/// run leaves a record of how far it got.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let previous = RunManifest::load(&out.join(RunManifest::FILE)).ok();
    let seed: u64 = cfg.value("seed")?;
    let mut r = Runner {
        out: out.clone(),
        previous,
        manifest: RunManifest {
            config: cfg.values.clone(),
            seed,
            ..Default::default()
        },
    };
    let o = |name: &str| out.join(name);

    // inputs
    let synth: bool = cfg.value("synth")?;
    let inputs = if synth {
        let data = o("data");
        let files = [
            "chars.txt",
            "chars.seg.txt",
            "syllables.txt",
            "syllables.seg.txt",
            "test.chars.txt",
            "test.seg.txt",
            "test.ref.txt",
        ]
        .map(|f| data.join(f));
        let outs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
        let scfg = cfg.synth_config()?;
        r.stage("synth", &[], cfg.params(&["synth", "seed"]), &outs, || {
            gen_cipher_corpus(&scfg)?.write_to_dir(&data)
        })?;
        let [chars, chars_seg, syl, syl_seg, test, test_seg, test_ref] = files;
        Inputs {
            chars,
            chars_seg: Some(chars_seg),
            syllables_src: Some(syl),
            spoken: None,
            syllables_seg: Some(syl_seg),
            test: Some(test),
            test_seg: Some(test_seg),
            test_ref: Some(test_ref),
            decomp: cfg.path("decomp"),
        }
    } else {
        Inputs {
            chars: cfg
                .path("chars")
                .ok_or_else(|| Error::Config("`chars` is required unless synth = true".into()))?,
            chars_seg: cfg.path("chars_seg"),
            syllables_src: cfg.path("syllables"),
            spoken: cfg.path("spoken").zip(cfg.path("dict")),
            syllables_seg: cfg.path("syllables_seg"),
            test: cfg.path("test"),
            test_seg: cfg.path("test_seg"),
            test_ref: cfg.path("test_ref"),
            decomp: cfg.path("decomp"),
        }
    };
    let vector = match cfg.raw("vector") {
        "auto" => inputs.chars_seg.is_some() && inputs.syllables_seg.is_some(),
        "true" => {
            if inputs.chars_seg.is_none() || inputs.syllables_seg.is_none() {
                return Err(Error::Config("vector = true needs chars_seg and syllables_seg".into()));
            }
            true
        }
        "false" => false,
        v => return Err(Error::Config(format!("bad value {v:?} for vector (auto | true | false)"))),
    };

    // pinyinize: toneless syllable corpus
    let syllables = o("syllables.toneless.txt");
    match (&inputs.spoken, &inputs.syllables_src) {
        (Some((spoken, dict)), _) => {
            r.stage("pinyinize", &[spoken, dict], vec![], &[&syllables], || {
                let dict = PronDictionary::from_tsv(&read(dict)?)?;
                let lines = read_lines(spoken)?;
                let (p, coverage) = pinyinize_lines(&lines, &dict);
                log::info!("pinyinize coverage {coverage:.4}");
                let rendered: Vec<String> = p.iter().map(|x| x.render(true)).collect();
                write(&syllables, &lines_body(&rendered))
            })?;
        }
        (None, Some(src)) => {
            r.stage("pinyinize", &[src], vec![], &[&syllables], || {
                let mut out = Vec::new();
                for l in read_lines(src)? {
                    let bases: Result<Vec<String>> = l
                        .split_whitespace()
                        .map(|t| Syllable::parse(t).map(|s| s.base().to_owned()))
                        .collect();
                    out.push(bases?.join(" "));
                }
                write(&syllables, &lines_body(&out))
            })?;
        }
        (None, None) => return Err(Error::Config("need `syllables`, or `spoken` with `dict`".into())),
    }

    let em_cfg = cfg.em_config()?;
    let order = em_cfg.mode.order();
    let (cc, sc) = (o("counts.chars.tsv"), o("counts.syllables.tsv"));
    r.stage("count", &[&inputs.chars, &syllables], cfg.params(&["em.mode"]), &[&cc, &sc], || {
        for (src, dst, domain) in [(&inputs.chars, &cc, Domain::Character), (&syllables, &sc, Domain::Syllable)] {
            let lines = read_lines(src)?;
            let mut table = SymbolTable::new();
            let stream = TokenStream::from_text(domain, lines.iter().map(String::as_str), &mut table);
            write(dst, &count_ngrams(&stream, order)?.to_tsv(&table))?;
        }
        Ok(())
    })?;

    let smoothing: Smoothing = cfg.value("lm.smoothing")?;
    let lm_path = o("lm.bigram.tsv");
    r.stage("lm", &[&syllables], cfg.params(&["lm"]), &[&lm_path], || {
        let lines = read_lines(&syllables)?;
        let mut vocab = SymbolTable::new();
        let stream = TokenStream::from_text(Domain::Syllable, lines.iter().map(String::as_str), &mut vocab);
        write(&lm_path, &train_lm(&count_ngrams_padded(&stream, 2)?, &vocab, smoothing)?.to_tsv())
    })?;

    let (channel, restarts) = (o("channel.tsv"), o("restarts.tsv"));
    let mut em_inputs: Vec<&Path> = vec![&inputs.chars, &syllables];
    if let (EmMode::Factored, Some(d)) = (em_cfg.mode, &inputs.decomp) {
        em_inputs.push(d);
    }
    r.stage("em", &em_inputs, cfg.params(&["em", "seed"]), &[&channel, &restarts], || {
        let corpora = Corpora::new(&read_lines(&inputs.chars)?, &read_lines(&syllables)?, smoothing)?;
        let (runs, best) = train_em(&corpora, &em_cfg, load_decomp(inputs.decomp.as_deref())?.as_ref())?;
        write(&channel, &channel_tsv(&runs[best], &em_cfg))?;
        write(&restarts, &restarts_tsv(&runs, best))
    })?;
    (r.manifest.restarts, r.manifest.selected_restart) = parse_restarts(&read(&restarts)?)?;

    let decode_cfg = cfg.decode_config()?;
    let map_cfg = cfg.map_config()?;
    let (vec_w, vec_s) = (o("vectors.written.txt"), o("vectors.spoken.txt"));
    let (mapping_path, table_path) = (o("mapping.txt"), o("table.tsv"));
    let (hints_path, agreement_path) = (o("hints.tsv"), o("agreement.tsv"));
    let (channel_h, restarts_h, table_c) = (o("channel.hinted.tsv"), o("restarts.hinted.tsv"), o("table.constrained.tsv"));
    if vector {
        let chars_seg = inputs.chars_seg.as_ref().expect("checked");
        let syl_seg = inputs.syllables_seg.as_ref().expect("checked");
        let ecfg = cfg.embed_config()?;
        r.stage("embed", &[chars_seg, syl_seg], cfg.params(&["embed", "seed"]), &[&vec_w, &vec_s], || {
            write(&vec_w, &embed_words(&split_words(&read_lines(chars_seg)?), &ecfg)?.to_text())?;
            write(&vec_s, &embed_words(&split_words(&read_lines(syl_seg)?), &ecfg)?.to_text())
        })?;

        let vcfg = cfg.vecmap_config()?;
        r.stage("vecmap", &[&vec_w, &vec_s], cfg.params(&["vecmap", "seed"]), &[&mapping_path, &table_path], || {
            let (x, z) = (load_vectors(&vec_w)?, load_vectors(&vec_s)?);
            let m = self_learn_map(&x, &z, &vcfg)?;
            for w in &m.warnings {
                log::warn!("{w}");
            }
            let table = map_words(&x, &z, &m.mapping, &ConfidentPairs::default(), &map_cfg)?;
            write(&mapping_path, &m.mapping.to_text())?;
            write(&table_path, &table.to_tsv())
        })?;

        let held_in: usize = cfg.value("distill.held_in")?;
        r.stage(
            "distill",
            &[&channel, &lm_path, &table_path, chars_seg],
            cfg.params(&["distill", "decode"]),
            &[&hints_path, &agreement_path],
            || {
                let words = split_words(&read_lines(chars_seg)?);
                let lm = NgramLM::from_tsv(&read(&lm_path)?)?;
                let (ch, _) = ChannelTable::from_tsv(&read(&channel)?)?;
                let table = WordPronTable::from_tsv(&read(&table_path)?)?;
                let (pairs, stats) = distill_from(&lm, &ch, &table, &words, held_in, decode_cfg, &map_cfg)?;
                write(&hints_path, &pairs.to_tsv())?;
                write(&agreement_path, &agreement_tsv(&stats))
            },
        )?;

        r.stage(
            "rerun",
            &[&inputs.chars, &syllables, &hints_path, &vec_w, &vec_s, &mapping_path],
            cfg.params(&["em", "vecmap.csls_k", "seed"]),
            &[&channel_h, &restarts_h, &table_c],
            || {
                let pairs = ConfidentPairs::from_tsv(&read(&hints_path)?)?;
                let corpora = Corpora::new(&read_lines(&inputs.chars)?, &read_lines(&syllables)?, smoothing)?;
                let hints: Vec<(String, String)> = pairs
                    .iter()
                    .filter(|(c, s)| corpora.chars.get(c).is_some() && corpora.syllables.get(s).is_some())
                    .map(|(c, s)| (c.to_owned(), s.to_owned()))
                    .collect();
                let hinted = EmConfig {
                    hints: resolve_hints(&hints, &corpora.chars, &corpora.syllables)?,
                    ..em_cfg.clone()
                };
                let (runs, best) = train_em(&corpora, &hinted, load_decomp(inputs.decomp.as_deref())?.as_ref())?;
                write(&channel_h, &channel_tsv(&runs[best], &hinted))?;
                write(&restarts_h, &restarts_tsv(&runs, best))?;
                let (x, z) = (load_vectors(&vec_w)?, load_vectors(&vec_s)?);
                let w = MappingMatrix::from_text(&read(&mapping_path)?)?;
                write(&table_c, &map_words(&x, &z, &w, &pairs, &map_cfg)?.to_tsv())
            },
        )?;
        (r.manifest.hinted_restarts, r.manifest.hinted_selected_restart) = parse_restarts(&read(&restarts_h)?)?;
    }

    let Some(test) = inputs.test.as_ref() else {
        r.manifest.complete = true;
        r.manifest.save(&r.manifest_path())?;
        return Ok(r.manifest);
    };
    let test_vector_ok = vector && inputs.test_seg.is_some();
    let mut hyps: Vec<(&str, PathBuf)> = vec![("em", o("test.em.txt"))];
    if vector {
        hyps.push(("em_hinted", o("test.em_hinted.txt")));
    }
    if test_vector_ok {
        hyps.push(("vector", o("test.vector.txt")));
    }
    let final_path = o("test.final.txt");
    let mut dec_inputs: Vec<&Path> = vec![test, &lm_path, &channel];
    if vector {
        dec_inputs.push(&channel_h);
    }
    if test_vector_ok {
        dec_inputs.extend([inputs.test_seg.as_deref().expect("checked"), &table_path, &table_c, &hints_path]);
    }
    let mut dec_outputs: Vec<&Path> = hyps.iter().map(|(_, p)| p.as_path()).collect();
    dec_outputs.push(&final_path);
    let test_seg = inputs.test_seg.clone();
    r.stage("decode", &dec_inputs, cfg.params(&["decode"]), &dec_outputs, || {
        let lines = read_lines(test)?;
        let lm = NgramLM::from_tsv(&read(&lm_path)?)?;
        let (ch, _) = ChannelTable::from_tsv(&read(&channel)?)?;
        let em = decode_lines(&lm, &ch, &lines, decode_cfg)?;
        write(&hyps[0].1, &lines_body(&em))?;
        let mut final_lines = em;
        if vector {
            let (chh, _) = ChannelTable::from_tsv(&read(&channel_h)?)?;
            write(&hyps[1].1, &lines_body(&decode_lines(&lm, &chh, &lines, decode_cfg)?))?;
        }
        if test_vector_ok {
            let words = split_words(&read_lines(test_seg.as_deref().expect("checked"))?);
            let none = ConfidentPairs::default();
            let table = WordPronTable::from_tsv(&read(&table_path)?)?;
            let vec_lines: Vec<String> = project_to_characters(&table, &words, &none, &map_cfg)?
                .iter()
                .map(|l| l.join(" "))
                .collect();
            write(&hyps[2].1, &lines_body(&vec_lines))?;
            let pairs = ConfidentPairs::from_tsv(&read(&hints_path)?)?;
            if pairs.is_empty() {
                // no agreement: keep whichever reading the EM model scores higher
                log::warn!("no agreed pairs; choosing the single method whose test reading scores higher under the EM model");
                let dec = Decoder::new(&lm, &ch, decode_cfg)?;
                let score = |ls: &[String]| -> f64 {
                    lines
                        .iter()
                        .zip(ls)
                        .map(|(l, h)| {
                            let states: Option<Vec<_>> = h.split_whitespace().map(|s| lm.vocab().get(s)).collect();
                            states.map_or(f64::NEG_INFINITY, |st| dec.score(&dec.encode_line(l), &st))
                        })
                        .sum()
                };
                if score(&vec_lines) > score(&final_lines) {
                    final_lines = vec_lines;
                }
            } else {
                let tc = WordPronTable::from_tsv(&read(&table_c)?)?;
                final_lines = project_to_characters(&tc, &words, &pairs, &map_cfg)?
                    .iter()
                    .map(|l| l.join(" "))
                    .collect();
            }
        }
        write(&final_path, &lines_body(&final_lines))
    })?;

    if let Some(reference) = inputs.test_ref.as_ref() {
        let report_path = o("eval.tsv");
        let mut ev_inputs: Vec<&Path> = vec![test, reference];
        ev_inputs.extend(dec_outputs.iter().copied());
        r.stage("eval", &ev_inputs, vec![], &[&report_path], || {
            let lines = read_lines(test)?;
            let chars = line_chars(&lines);
            let refs = parse_syllable_file(reference)?;
            let mut all: Vec<(String, PathBuf)> = hyps.iter().map(|(n, p)| ((*n).to_owned(), p.clone())).collect();
            all.push(("final".into(), final_path.clone()));
            let mut body = String::new();
            for (name, path) in all {
                let hyp = parse_syllable_file(&path)?;
                let rep = evaluate(&chars, &hyp, &refs)?;
                for line in rep.to_tsv().lines() {
                    let _ = writeln!(body, "{name}\t{line}");
                }
            }
            write(&report_path, &body)
        })?;
    }
    r.manifest.complete = true;
    r.manifest.save(&r.manifest_path())?;
    Ok(r.manifest)
}

/// All syllables of a whitespace-separated pinyin file, in order.
pub fn parse_syllable_file(path: &Path) -> Result<Vec<Syllable>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for t in line.split_whitespace() {
            out.push(Syllable::parse(t).map_err(|e| Error::parse(name_of(path), i + 1, e.to_string()))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(v: &[f64]) -> LikelihoodTrace {
        LikelihoodTrace { values: v.to_vec() }
    }

    #[test]
    fn best_restart_is_max_final_with_low_index_ties() {
        let (a, b, c) = (trace(&[-9.0, -5.0]), trace(&[-9.0, -4.2]), trace(&[-4.9]));
        assert_eq!(select_best_restart(&[&a, &b, &c]).unwrap(), 1);
        let (d, e) = (trace(&[-4.2]), trace(&[-4.2]));
        assert_eq!(select_best_restart(&[&d, &e]).unwrap(), 0);
        assert!(select_best_restart(&[]).is_err());
    }

    #[test]
    fn config_parses_overrides_and_rejects_unknown_keys() {
        let mut c = RunConfig::parse("# run\nseed = 7\nem.iterations=3  # short\n\n").unwrap();
        assert_eq!(c.get("seed"), Some("7"));
        assert_eq!(c.value::<usize>("em.iterations").unwrap(), 3);
        assert_eq!(c.value::<usize>("em.restarts").unwrap(), 5);
        c.set("em.iterations", "9").unwrap();
        assert_eq!(c.em_config().unwrap().iterations, 9);
        assert!(c.set("em.iters", "9").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
        assert!(RunConfig::parse("em.mode = tree\n").unwrap().em_config().is_err());
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn restarts_file_round_trips() {
        let (lls, sel) = parse_restarts("restart\tloglik\tselected\n0\t-5\t0\n1\t-4.5\t1\n").unwrap();
        assert_eq!(lls, vec![-5.0, -4.5]);
        assert_eq!(sel, Some(1));
        assert!(parse_restarts("h\n0\tx\t0\n").is_err());
    }
}
