use std::path::PathBuf;
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The binary with no DBROUTER_* settings inherited from the environment.
fn dbrouter(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dbrouter"));
    for (k, _) in std::env::vars() {
        if k.starts_with("DBROUTER_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_subcommands() {
    let o = dbrouter(&["--help"]);
    assert!(o.status.success());
    for sub in ["ingest", "synth", "index", "train", "route", "eval", "experiment", "serve"] {
        assert!(stdout(&o).contains(sub), "missing {sub}");
    }
}

#[test]
fn route_prints_top_k() {
    let toy = fixtures().join("toy");
    let o = dbrouter(&[
        "route",
        "--manifest",
        toy.to_str().unwrap(),
        "--provider",
        "test:64:0",
        "--question",
        "How many singers do we have?",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        let cols: Vec<&str> = l.split('\t').collect();
        assert_eq!(cols.len(), 3, "{l}");
        assert_eq!(cols[0], (i + 1).to_string());
        cols[2].parse::<f64>().unwrap();
    }
}

#[test]
fn bad_input_gives_one_error_line() {
    let o = dbrouter(&["route", "--manifest", "/no/such/dir", "--provider", "test:8:0", "--question", "q"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");

    let o = dbrouter(&["route", "--manifest", fixtures().join("toy").to_str().unwrap(), "--question", "q"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage: "), "{}", stderr(&o));

    let o = dbrouter(&["route", "--manifest", fixtures().join("toy").to_str().unwrap(), "--provider", "test:8:0",
        "--strategy", "best", "--question", "q"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_on_toy_corpus() {
    let toy = fixtures().join("toy");
    let toy = toy.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();

    let o = dbrouter(&["synth", "splits", "--manifest", toy, "--in-fraction", "0.5", "--out", &p("split.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dbrouter(&["synth", "schema-pairs", "--manifest", toy, "--split", &p("split.json"), "--out", &p("pairs.jsonl")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dbrouter(&[
        "train", "--pairs", &p("pairs.jsonl"), "--out", &p("schema.adapter"), "--provider", "test:32:0",
        "--epochs", "2", "--lr", "0.001",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dbrouter(&[
        "index", "build", "--manifest", toy, "--provider", "test:32:0", "--schema-adapter", &p("schema.adapter"),
        "--out", &p("toy.idx"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dbrouter(&["index", "inspect", "--index", &p("toy.idx")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dbrouter(&[
        "eval", "--manifest", toy, "--index", &p("toy.idx"), "--provider", "test:32:0", "--schema-adapter",
        &p("schema.adapter"), "--strategy", "whole-schema", "--split", &p("split.json"), "--set", "test",
        "--report", &p("report"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("report.csv").exists());

    // An index built with one adapter refuses to load without it.
    let o = dbrouter(&[
        "route", "--manifest", toy, "--index", &p("toy.idx"), "--provider", "test:32:0", "--strategy",
        "whole-schema", "--question", "q",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
