use std::path::Path;
use std::process::Command;

use dse_core::cli::run;

fn dse(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("dse").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let base = ["synth", "--topics", "3", "--dialogues-per-topic", "4", "--out"];
    for (path, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let mut args = base.to_vec();
        args.extend([p(path), "--seed", seed]);
        assert_eq!(dse(&args).0, 0);
    }
    let read = |x: &Path| std::fs::read(x).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn preset_and_flags_show_in_printed_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("c.jsonl");
    let (code, out, _) = dse(&["synth", "--topics", "1", "--out", p(&out_path), "--preset", "paper", "--epochs", "3"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# dse synth"), "{out}");
    assert!(out.contains("# preset: paper"));
    let line = |key: &str| out.lines().find(|l| l.starts_with(&format!("{key}="))).unwrap().to_string();
    assert!(line("batch_size").starts_with("batch_size=1024") && line("batch_size").ends_with("# preset"));
    assert!(line("epochs").starts_with("epochs=3") && line("epochs").ends_with("# flag"));
    assert!(line("temperature").starts_with("temperature=0.05"));
}

#[test]
fn train_embed_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let small = ["--vocab-size", "500", "--embed-dim", "8", "--head-out", "4", "--batch-size", "16", "--epochs", "2"];
    assert_eq!(dse(&["synth", "--topics", "2", "--dialogues-per-topic", "5", "--out", p(&d("c"))]).0, 0);
    let (corpus, model) = (d("c"), d("m"));
    let mut args = vec!["train", "--in", p(&corpus), "--out", p(&model)];
    args.extend(small);
    let (code, _, err) = dse(&args);
    assert_eq!(code, 0, "{err}");
    std::fs::write(d("texts"), "hello there\nanother line of text\n\n").unwrap();
    let (code, _, err) = dse(&["embed", "--ckpt", p(&d("m")), "--in", p(&d("texts")), "--out", p(&d("e"))]);
    assert_eq!(code, 0, "{err}");
    let (_, out, _) = dse(&["inspect", p(&d("e"))]);
    assert!(out.contains("kind=embeddings") && out.contains("\nn=2\n") && out.contains("\ndim=8\n"), "{out}");
    let (_, out, _) = dse(&["inspect", p(&d("m"))]);
    assert!(out.contains("kind=checkpoint") && out.contains("epoch=2"), "{out}");
}

#[test]
fn bad_input_exit_codes() {
    let (code, _, err) = dse(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.to_lowercase().contains("usage"), "{err}");
    let (code, _, err) = dse(&["synth", "--out", "/nonexistent/x", "--epochs", "0"]);
    assert_eq!(code, 2);
    assert!(err.contains("epochs"), "{err}");
    let (code, _, err) = dse(&["synth", "--out", "/nonexistent/x", "--temperature", "warm"]);
    assert_eq!(code, 2);
    assert!(err.contains("temperature"), "{err}");
    let (code, _, _) = dse(&["inspect", "/nonexistent/file"]);
    assert_eq!(code, 1);
}

#[test]
fn binary_runs() {
    let out = Command::new(env!("CARGO_BIN_EXE_dse")).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("epoch-study"));
    let out = Command::new(env!("CARGO_BIN_EXE_dse")).arg("nope").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
