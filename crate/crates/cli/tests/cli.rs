use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CORPUS: &str = "the walkers walked and talked\nshe walks while he talks\nwalking talking walked\n";

fn selfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfseg"))
        .args(args)
        .env("SELFSEG_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = selfseg(args);
    assert!(
        out.status.success(),
        "selfseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    selfseg(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("corpus.txt"), CORPUS).unwrap();
        Workspace { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// normalize → build-vocab → train, returning (vocab, model).
    fn train(&self, tag: &str) -> (PathBuf, PathBuf) {
        let (freq, words, vocab, model) = (
            self.p(&format!("{tag}.freq.tsv")),
            self.p(&format!("{tag}.words.txt")),
            self.p(&format!("{tag}.vocab.txt")),
            self.p(&format!("{tag}.model.bin")),
        );
        ok(&[
            "normalize", "--corpus", s(&self.p("corpus.txt")), "--strategy", "one", "--out", s(&freq),
            "--materialize", s(&words), "--seed", "3",
        ]);
        ok(&["build-vocab", "--input", s(&freq), "--size", "40", "--out", s(&vocab)]);
        ok(&[
            "train", "--corpus", s(&words), "--vocab", s(&vocab), "--out", s(&model), "--epochs", "2",
            "--dim", "8", "--ff-dim", "16", "--heads", "2", "--enc-layers", "1", "--dec-layers", "1",
            "--warmup", "5", "--batch-tokens", "40", "--seed", "9", "--mask", "subwordmass",
        ]);
        (vocab, model)
    }
}

#[test]
fn full_workflow() {
    let ws = Workspace::new();
    let (vocab, model) = ws.train("a");
    let vocab_text = std::fs::read_to_string(&vocab).unwrap();
    assert!(vocab_text.starts_with("#selfseg-vocab v1\n<mask>\t0\n"));

    let (seg, stats_json) = (ws.p("seg.txt"), ws.p("stats.json"));
    ok(&[
        "segment", "--model", s(&model), "--vocab", s(&vocab), "--input", s(&ws.p("corpus.txt")),
        "--out", s(&seg), "--stats", s(&stats_json),
    ]);
    let segmented = std::fs::read_to_string(&seg).unwrap();
    assert_eq!(segmented.replace("@@ ", ""), CORPUS);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats_json).unwrap()).unwrap();
    assert_eq!(run["scorer_calls"], run["distinct_words"]);
    assert_eq!(run["tokens"], 13);

    let out = ok(&["stats", "--input", s(&seg), "--json"]);
    let st: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(st["lines"], 3);
    assert_eq!(st["tokens"], 13);
    assert_eq!(st["distinct_words"], run["distinct_words"]);

    let reg = ws.p("reg.txt");
    ok(&[
        "segment-reg", "--model", s(&model), "--vocab", s(&vocab), "--input", s(&ws.p("corpus.txt")),
        "--out", s(&reg), "--epoch", "1", "--n", "5", "--t", "2", "--seed", "4",
    ]);
    assert_eq!(std::fs::read_to_string(&reg).unwrap().replace("@@ ", ""), CORPUS);

    let csv = ws.p("diff.csv");
    let out = ok(&[
        "diff", "--a", s(&seg), "--b", s(&reg), "--orig", s(&ws.p("corpus.txt")), "--freq-split", "5",
        "--csv", s(&csv),
    ]);
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.contains("DIF_corpus"));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("word,freq,band,dif,a,b\n"));

    let out = ok(&["diff", "--a", s(&seg), "--b", s(&seg)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("| DIF_corpus | 0.0000 |"));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let ws = Workspace::new();
    let outputs: Vec<(Vec<u8>, Vec<u8>)> = ["x", "y"]
        .iter()
        .map(|tag| {
            let (vocab, model) = ws.train(tag);
            let seg = ws.p(&format!("{tag}.seg"));
            ok(&[
                "segment", "--model", s(&model), "--vocab", s(&vocab), "--input", s(&ws.p("corpus.txt")),
                "--out", s(&seg),
            ]);
            (std::fs::read(&model).unwrap(), std::fs::read(&seg).unwrap())
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let (vocab, model) = ws.train("m");
    let corpus = ws.p("corpus.txt");

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["segment", "--model", s(&model)]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(
        code(&[
            "segment-reg", "--model", s(&model), "--vocab", s(&vocab), "--input", s(&corpus), "--out",
            s(&ws.p("o")), "--t", "0",
        ]),
        1
    );
    assert_eq!(code(&["normalize", "--corpus", s(&corpus), "--strategy", "cube", "--out", s(&ws.p("f"))]), 1);
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_selfseg"))
        .args(["stats", "--input", s(&corpus)])
        .env("SELFSEG_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(bad_threads.code(), Some(1));

    assert_eq!(code(&["stats", "--input", s(&ws.p("missing.txt"))]), 2);
    std::fs::write(ws.p("bad.tsv"), "word\tnotanumber\n").unwrap();
    assert_eq!(code(&["build-vocab", "--input", s(&ws.p("bad.tsv")), "--size", "40", "--out", s(&ws.p("v"))]), 2);
    std::fs::write(ws.p("marked.txt"), "a@@ b\n").unwrap();
    assert_eq!(
        code(&[
            "segment", "--model", s(&model), "--vocab", s(&vocab), "--input", s(&ws.p("marked.txt")), "--out",
            s(&ws.p("o")),
        ]),
        2
    );

    let other = ws.p("other.vocab.txt");
    std::fs::write(&other, "#selfseg-vocab v1\n<mask>\t0\n<s>\t1\n</s>\t2\n<pad>\t3\na\t4\n").unwrap();
    assert_eq!(
        code(&["segment", "--model", s(&model), "--vocab", s(&other), "--input", s(&corpus), "--out", s(&ws.p("o"))]),
        3
    );
    std::fs::write(ws.p("junk.bin"), b"not a checkpoint").unwrap();
    assert_eq!(
        code(&[
            "segment", "--model", s(&ws.p("junk.bin")), "--vocab", s(&vocab), "--input", s(&corpus), "--out",
            s(&ws.p("o")),
        ]),
        3
    );
}

#[test]
fn resume_keeps_architecture() {
    let ws = Workspace::new();
    let (vocab, model) = ws.train("r");
    let words = ws.p("r.words.txt");
    let resumed = ws.p("resumed.bin");
    ok(&[
        "train", "--corpus", s(&words), "--vocab", s(&vocab), "--out", s(&resumed), "--resume", s(&model),
        "--epochs", "1", "--lr", "0.0001",
    ]);
    assert_ne!(std::fs::read(&model).unwrap(), std::fs::read(&resumed).unwrap());
    assert_eq!(
        code(&[
            "train", "--corpus", s(&words), "--vocab", s(&vocab), "--out", s(&resumed), "--resume", s(&model),
            "--dim", "16",
        ]),
        1
    );
}
