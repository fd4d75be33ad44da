use std::path::Path;

use decipher_core::pipeline::{run, RunConfig, RunManifest, StageStatus};

fn small(out: &Path) -> RunConfig {
    let text = format!(
        "out = {}\nsynth = true\nsynth.source = words\nsynth.syllables = 30\nsynth.characters = 100\nsynth.words = 250\nsynth.char_tokens = 40000\nsynth.syllable_tokens = 40000\n\
         em.n = 2000\nem.m = 2000\nem.iterations = 3\nem.restarts = 2\n\
         embed.dim = 16\nembed.epochs = 1\nembed.window = 2\nvecmap.patience = 2\nvecmap.max_iterations = 40\n\
         distill.held_in = 5000\n",
        out.display()
    );
    RunConfig::parse(&text).unwrap()
}

const ALL: [&str; 11] = ["synth", "pinyinize", "count", "lm", "em", "embed", "vecmap", "distill", "rerun", "decode", "eval"];

#[test]
fn synthetic_run_completes_then_skips_then_reruns_downstream_of_em() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());

    let m = run(&cfg).unwrap();
    assert!(m.complete);
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ALL);
    assert_eq!(m.executed(), ALL);
    assert!(m.stages.iter().all(|s| s.status == StageStatus::Completed));
    for s in &m.stages {
        for (path, digest) in &s.outputs {
            assert_eq!(&decipher_core::pipeline::sha256_hex(&std::fs::read(path).unwrap()), digest);
        }
    }
    // selected restart has the maximal final objective
    assert_eq!(m.restarts.len(), 2);
    let sel = m.selected_restart.unwrap();
    assert!(m.restarts.iter().all(|&l| l <= m.restarts[sel]));
    assert_eq!(m.hinted_restarts.len(), 2);
    let on_disk = RunManifest::load(&dir.path().join(RunManifest::FILE)).unwrap();
    assert_eq!(on_disk, m);
    let report = std::fs::read_to_string(dir.path().join("eval.tsv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("final\texact-no-tone\t")), "{report}");

    let again = run(&cfg).unwrap();
    assert!(again.executed().is_empty(), "{:?}", again.executed());
    assert_eq!(again.restarts, m.restarts);

    cfg.set("em.iterations", "4").unwrap();
    let edited = run(&cfg).unwrap();
    assert_eq!(edited.executed(), ["em", "distill", "rerun", "decode", "eval"]);
}

#[test]
fn failed_stage_leaves_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.set("synth.source", "trigram").unwrap();
    cfg.set("vector", "false").unwrap();
    cfg.set("em.mode", "factored").unwrap();
    let err = run(&cfg).unwrap_err();
    assert!(err.to_string().contains("stage em failed"), "{err}");
    let m = RunManifest::load(&dir.path().join(RunManifest::FILE)).unwrap();
    assert!(!m.complete);
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["synth", "pinyinize", "count", "lm", "em"]);
    assert!(matches!(m.stage("em").unwrap().status, StageStatus::Failed(_)));
    assert_eq!(m.stage("lm").unwrap().status, StageStatus::Completed);
}

#[test]
fn file_inputs_without_vectors_run_em_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("in");
    std::fs::create_dir_all(&data).unwrap();
    let corpus = decipher_core::synth::gen_cipher_corpus(&decipher_core::synth::SynthConfig {
        syllables: 30,
        characters: 100,
        char_tokens: 30_000,
        syllable_tokens: 30_000,
        ..Default::default()
    })
    .unwrap();
    corpus.write_to_dir(&data).unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "out = out\nchars = in/chars.txt\nsyllables = in/syllables.txt\ntest = in/test.chars.txt\ntest_ref = in/test.ref.txt\n\
         em.n = 1000\nem.m = 1000\nem.iterations = 2\nem.restarts = 1\n",
    )
    .unwrap();
    let m = run(&RunConfig::from_file(&cfg_path).unwrap()).unwrap();
    assert_eq!(m.executed(), ["pinyinize", "count", "lm", "em", "decode", "eval"]);
    let out = dir.path().join("out");
    let hyp = std::fs::read_to_string(out.join("test.final.txt")).unwrap();
    assert_eq!(hyp, std::fs::read_to_string(out.join("test.em.txt")).unwrap());
    assert_eq!(hyp.lines().count(), corpus.test.lines.len());
}
