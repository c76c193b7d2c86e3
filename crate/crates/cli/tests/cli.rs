use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5

[data]
real_train = 10
real_val = 4
synth_val = 4

[pretrain]
iterations = 12

[train]
iterations = 6
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("run.toml");
        Command::new(env!("CARGO_BIN_EXE_textseg"))
            .current_dir(self.dir.path())
            .arg("--config")
            .arg(&config)
            .args(args)
            .env("RUST_LOG", "info")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// Synthesizes data and pretrains a checkpoint.
    fn prepared(config: &str) -> Self {
        let w = Self::new(config);
        w.ok(&["synth", "--out", "data"]);
        w.ok(&["pretrain", "--out", "pre.ckpt"]);
        w
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn repeated_runs_write_identical_files() {
    let a = Workspace::prepared(CONFIG);
    let b = Workspace::prepared(CONFIG);
    for w in [&a, &b] {
        w.ok(&["train", "--init", "pre.ckpt", "--real", "data/real_train.jsonl", "--out", "weak.ckpt"]);
    }
    for name in ["data/real_train.jsonl", "data/lm.bin", "data/corpus.txt", "pre.ckpt", "pre.ckpt.log.jsonl", "weak.ckpt", "weak.ckpt.log.jsonl"] {
        assert_eq!(read(&a.path(name)), read(&b.path(name)), "{name}");
    }
    let log = String::from_utf8(read(&a.path("weak.ckpt.log.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 6);
}

#[test]
fn zero_iterations_keep_the_initial_model() {
    let w = Workspace::prepared(&CONFIG.replace("iterations = 6", "iterations = 0"));
    w.ok(&["train", "--init", "pre.ckpt", "--real", "data/real_train.jsonl", "--out", "same.ckpt"]);
    for ckpt in ["pre.ckpt", "same.ckpt"] {
        w.ok(&["eval", "--data", "data/real_val.jsonl", "--checkpoint", ckpt, "--report", &format!("{ckpt}.json")]);
    }
    assert_eq!(read(&w.path("pre.ckpt.json")), read(&w.path("same.ckpt.json")));
}

#[test]
fn decoded_output_scores_like_the_checkpoint() {
    let w = Workspace::prepared(CONFIG);
    w.ok(&["decode", "--checkpoint", "pre.ckpt", "--data", "data/synth_val.jsonl", "--out", "dec.jsonl"]);
    w.ok(&["eval", "--data", "data/synth_val.jsonl", "--decoded", "dec.jsonl", "--report", "a.json"]);
    w.ok(&["eval", "--data", "data/synth_val.jsonl", "--checkpoint", "pre.ckpt", "--report", "b.json"]);
    assert_eq!(read(&w.path("a.json")), read(&w.path("b.json")));
}

#[test]
fn language_model_changes_are_logged() {
    let w = Workspace::prepared(CONFIG);
    let out = w.ok(&[
        "decode",
        "--checkpoint",
        "pre.ckpt",
        "--data",
        "data/real_val.jsonl",
        "--lm",
        "data/lm.bin",
        "--out",
        "dec.jsonl",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    let summary = stdout.lines().find(|l| l.starts_with("language model changed")).expect("summary line");
    let n: usize = summary.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert_eq!(stderr.matches(": language model changed ").count(), n);
}

#[test]
fn empty_decode_leaves_images_untouched() {
    let w = Workspace::new(CONFIG);
    w.ok(&["synth", "--out", "data"]);
    fs::write(w.path("empty.jsonl"), "").unwrap();
    let out = w.ok(&["viz", "--data", "data/real_val.jsonl", "--decoded", "empty.jsonl", "--out", "viz"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("4 overlays"));
    for e in fs::read_dir(w.path("viz")).unwrap() {
        let p = e.unwrap().path();
        let source = w.path("data/real_val").join(p.file_name().unwrap());
        assert_eq!(read(&p), read(&source), "{}", p.display());
    }
}

#[test]
fn exit_codes_separate_usage_config_and_data_errors() {
    let w = Workspace::new(CONFIG);
    let code = |o: Output| o.status.code().unwrap();
    assert_eq!(code(w.run(&["--help"])), 0);
    assert_eq!(code(w.run(&["frobnicate"])), 1);
    assert_eq!(code(w.run(&["eval", "--data", "x.jsonl"])), 1);
    assert_eq!(code(w.run(&["eval", "--data", "missing.jsonl", "--checkpoint", "missing.ckpt"])), 2);

    let bad = Workspace::new("[data]\nno_such_field = 3\n");
    assert_eq!(code(bad.run(&["synth", "--out", "data"])), 1);
    let preset = Command::new(env!("CARGO_BIN_EXE_textseg"))
        .args(["--preset", "nope", "synth", "--out"])
        .arg(w.path("d"))
        .output()
        .unwrap();
    assert_eq!(preset.status.code(), Some(1));
}
