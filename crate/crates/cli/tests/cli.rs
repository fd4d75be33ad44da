use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn decipher(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_decipher")).args(args).output().expect("spawn decipher");
    assert!(
        out.status.success(),
        "decipher {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn small_synth(dir: &Path) {
    decipher(&[
        "--seed", "3", "synth", "--out-dir", &p(dir, "d"), "--source", "words", "--syllables", "30",
        "--characters", "100", "--words", "250", "--char-tokens", "40000", "--syllable-tokens", "40000",
        "--test-tokens", "1000",
    ]);
}

#[test]
fn subcommands_chain_on_a_synthetic_corpus() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    small_synth(dir);
    let d = dir.join("d");

    decipher(&["train-lm", "--in", &p(&d, "syllables.txt"), "--out", &p(dir, "lm.tsv")]);
    decipher(&[
        "em-train", "--char-corpus", &p(&d, "chars.txt"), "--pinyin-corpus", &p(&d, "syllables.txt"),
        "--n", "2000", "--m", "2000", "--iters", "3", "--restarts", "2", "--out", &p(dir, "ch.tsv"),
        "--restarts-out", &p(dir, "r.tsv"),
    ]);
    let restarts = fs::read_to_string(dir.join("r.tsv")).unwrap();
    assert_eq!(restarts.lines().count(), 3);

    decipher(&[
        "decode", "--channel", &p(dir, "ch.tsv"), "--lm", &p(dir, "lm.tsv"), "--in", &p(&d, "test.chars.txt"),
        "--out", &p(dir, "hyp.txt"),
    ]);
    let hyp = fs::read_to_string(dir.join("hyp.txt")).unwrap();
    let reference = fs::read_to_string(d.join("test.ref.txt")).unwrap();
    assert_eq!(hyp.lines().count(), reference.lines().count());

    let out = decipher(&[
        "eval", "--hyp", &p(dir, "hyp.txt"), "--ref", &p(&d, "test.ref.txt"), "--mode", "exact-no-tone",
    ]);
    let report = String::from_utf8(out.stdout).unwrap();
    let acc: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("exact-no-tone\t"))
        .expect("accuracy line")
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));

    for (src, dst) in [("chars.seg.txt", "cv.txt"), ("syllables.seg.txt", "sv.txt")] {
        decipher(&[
            "embed", "--in", &p(&d, src), "--out", &p(dir, dst), "--dim", "16", "--window", "2", "--epochs", "1",
        ]);
    }
    decipher(&[
        "vecmap", "--src-vec", &p(dir, "cv.txt"), "--tgt-vec", &p(dir, "sv.txt"), "--patience", "2",
        "--mapping-out", &p(dir, "map.txt"), "--out", &p(dir, "table.tsv"),
    ]);
    // reusing the written mapping reproduces the table
    decipher(&[
        "vecmap", "--src-vec", &p(dir, "cv.txt"), "--tgt-vec", &p(dir, "sv.txt"), "--mapping", &p(dir, "map.txt"),
        "--out", &p(dir, "table2.tsv"),
    ]);
    assert_eq!(
        fs::read_to_string(dir.join("table.tsv")).unwrap(),
        fs::read_to_string(dir.join("table2.tsv")).unwrap()
    );

    decipher(&[
        "distill", "--channel", &p(dir, "ch.tsv"), "--lm", &p(dir, "lm.tsv"), "--table", &p(dir, "table.tsv"),
        "--chars-seg", &p(&d, "chars.seg.txt"), "--held-in", "5000", "--out", &p(dir, "hints.tsv"), "--stats",
        &p(dir, "agree.tsv"),
    ]);
    assert!(fs::read_to_string(dir.join("agree.tsv")).unwrap().contains("types_compared"));
}

#[test]
fn pinyinize_and_count() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    fs::write(dir.join("dict.tsv"), "中国\tzhong1 guo2\n中\tzhong1\n国\tguo2\n人\tren2\n").unwrap();
    fs::write(dir.join("in.txt"), "中国人\n人中\n").unwrap();
    decipher(&["pinyinize", "--dict", &p(dir, "dict.tsv"), "--in", &p(dir, "in.txt"), "--out", &p(dir, "out.txt")]);
    assert_eq!(fs::read_to_string(dir.join("out.txt")).unwrap(), "zhong1 guo2 ren2\nren2 zhong1\n");
    decipher(&[
        "pinyinize", "--dict", &p(dir, "dict.tsv"), "--in", &p(dir, "in.txt"), "--out", &p(dir, "bare.txt"),
        "--strip-tones",
    ]);
    assert_eq!(fs::read_to_string(dir.join("bare.txt")).unwrap(), "zhong guo ren\nren zhong\n");

    decipher(&["count", "--in", &p(dir, "in.txt"), "--domain", "char", "--order", "1", "--top", "1", "--out", &p(dir, "c.tsv")]);
    let top = fs::read_to_string(dir.join("c.tsv")).unwrap();
    assert_eq!(top.lines().count(), 1);
    assert!(top.ends_with("\t2\n"), "{top:?}");
}

#[test]
fn run_skips_unchanged_stages() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    small_synth(dir);
    let d = dir.join("d");
    let config = format!(
        "out = {}\nchars = {}\nsyllables = {}\ntest = {}\ntest_ref = {}\nem.n = 2000\nem.m = 2000\nem.iterations = 2\nem.restarts = 1\n",
        p(dir, "run"),
        p(&d, "chars.txt"),
        p(&d, "syllables.txt"),
        p(&d, "test.chars.txt"),
        p(&d, "test.ref.txt"),
    );
    fs::write(dir.join("run.conf"), config).unwrap();
    let first = String::from_utf8(decipher(&["run", "--config", &p(dir, "run.conf")]).stdout).unwrap();
    assert!(first.lines().any(|l| l.starts_with("em") && l.contains("ran")), "{first}");
    assert!(dir.join("run/manifest.json").exists());

    let second = String::from_utf8(decipher(&["run", "--config", &p(dir, "run.conf")]).stdout).unwrap();
    assert!(second.lines().filter(|l| l.contains("ran in")).count() == 0, "{second}");

    let third = String::from_utf8(
        decipher(&["run", "--config", &p(dir, "run.conf"), "--set", "decode.exponent=2"]).stdout,
    )
    .unwrap();
    let ran: Vec<&str> = third.lines().filter(|l| l.contains("ran in")).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(ran, ["decode", "eval"]);
}

#[test]
fn run_lists_keys() {
    let out = String::from_utf8(decipher(&["run", "--keys"]).stdout).unwrap();
    assert!(out.lines().any(|l| l.starts_with("em.iterations")));
}

#[test]
fn bad_arguments_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_decipher"))
        .args(["run", "--set", "no.such.key=1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
