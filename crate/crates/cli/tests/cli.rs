use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_branchpred");

fn bp(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bp(args);
    assert_eq!(code(&out), 0, "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

fn synth(dir: &Path, name: &str, trees: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    ok(&["synth", "--out", p(&path), "--seed", "3", "--trees", trees, "--context-signal", "0.9", "--text-signal", "0.5"]);
    path
}

const DESK: [&str; 6] = ["--learning-rate", "0.001", "--max-epochs", "30", "--patience", "3"];

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bp(&[])), 1);
    assert_eq!(code(&bp(&["frobnicate"])), 1);
    assert_eq!(code(&bp(&["train", "--train", "a.csv", "--val", "b.csv", "--out", "m.json"])), 1);
    assert_eq!(code(&bp(&["eval", "--model", "m.json", "--features", "f.csv"])), 1);
    assert_eq!(code(&bp(&["features", "--corpus", "c", "--scores", "s", "--out", "o", "--relaxation", "0"])), 1);
    assert_eq!(code(&bp(&["--help"])), 0);
}

#[test]
fn ingest_empty_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = bp(&["ingest", p(&empty), "--out", p(&dir.path().join("c.jsonl"))]);
    assert_eq!(code(&out), 2);
    let missing = bp(&["ingest", p(&dir.path().join("nope.jsonl")), "--out", p(&dir.path().join("c.jsonl"))]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn ingest_reports_rejections_and_tallies() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("raw.jsonl");
    let rows = [
        r#"{"id":"a0","conversation_id":"a","reply_to":null,"speaker":"op","timestamp":0,"text":"root"}"#,
        r#"{"id":"a1","conversation_id":"a","reply_to":"a0","speaker":"x","timestamp":1,"text":"one"}"#,
        r#"{"id":"a2","conversation_id":"a","reply_to":"a1","speaker":"op","timestamp":2,"text":"two"}"#,
        r#"{"id":"a3","conversation_id":"a","reply_to":"a1","speaker":"y","timestamp":3,"text":"three"}"#,
        r#"{"id":"b0","conversation_id":"b","reply_to":null,"speaker":"op","timestamp":0,"text":"root"}"#,
        r#"{"id":"b1","conversation_id":"b","reply_to":"b0","speaker":"z","timestamp":5,"text":"one"}"#,
        r#"{"id":"b2","conversation_id":"b","reply_to":"b1","speaker":"op","timestamp":6,"text":"two"}"#,
        r#"{"id":"o0","conversation_id":"o","reply_to":null,"speaker":"op","timestamp":0,"text":"root"}"#,
        r#"{"id":"o1","conversation_id":"o","reply_to":"missing","speaker":"q","timestamp":1,"text":"orphan"}"#,
    ];
    fs::write(&input, rows.join("\n")).unwrap();
    let corpus = dir.path().join("c.jsonl");
    let stats = dir.path().join("stats.json");
    let out = bp(&["ingest", p(&input), "--out", p(&corpus), "--stats", p(&stats), "--min-comments", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rejected conversation o"));
    assert!(stdout(&out).contains("# Conversations"));
    let s: Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    // a: 4 nodes, depth 2, 3 authors, 1 branch (a3); b: 3 nodes, depth 2, 2 authors, none.
    assert_eq!(s["# Conversations"], 2);
    assert_eq!(s["# Comments"], 7);
    assert_eq!(s["Mean # nodes"], 3.5);
    assert_eq!(s["Mean depth"], 2.0);
    assert_eq!(s["# Authors"], 2.5);
    assert_eq!(s["# Branches"], 0.5);

    let again = dir.path().join("again.jsonl");
    ok(&["ingest", p(&input), "--out", p(&again), "--min-comments", "3"]);
    assert_eq!(fs::read(&corpus).unwrap(), fs::read(&again).unwrap());
    let twice = dir.path().join("twice.jsonl");
    ok(&["ingest", p(&corpus), "--out", p(&twice), "--min-comments", "3"]);
    assert_eq!(fs::read(&corpus).unwrap(), fs::read(&twice).unwrap());
}

#[test]
fn synth_writes_metadata_and_rejects_degenerate_sizes() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(dir.path(), "s.jsonl", "60");
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["trees"], 60);
    assert_eq!(meta["planted"].as_array().unwrap().len(), 2);
    ok(&["ingest", p(&corpus), "--out", p(&dir.path().join("i.jsonl"))]);
    let bad = bp(&["synth", "--out", p(&dir.path().join("b.jsonl")), "--seed", "1", "--min-size", "2"]);
    assert_ne!(code(&bad), 0);
}

/// The stage commands chained by hand reproduce `run` exactly.
#[test]
fn staged_commands_match_run() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = synth(d, "s.jsonl", "60");
    let manifest = d.join("m.json");
    fs::write(
        &manifest,
        r#"{"corpus": "s.jsonl", "output_dir": "run", "seed": 4, "importance_repetitions": 2,
            "train": {"learning_rate": 0.001, "max_epochs": 30, "patience": 3}}"#,
    )
    .unwrap();
    ok(&["run", p(&manifest)]);
    let run = d.join("run");

    let st = d.join("staged");
    ok(&["pairs", "--corpus", p(&corpus), "--out-dir", p(&st), "--seed", "4"]);
    ok(&["train-scorer", "--pairs", p(&st.join("pairs.jsonl")), "--out", p(&st.join("scorer.json")), "--seed", "4"]);
    let splits: Vec<_> = ["train", "val", "test"].iter().map(|s| st.join(format!("{s}.jsonl"))).collect();
    let (scorer, scores) = (st.join("scorer.json"), st.join("scores.jsonl"));
    let mut score = vec!["score", "--scorer", p(&scorer), "--out", p(&scores)];
    for s in &splits {
        score.extend(["--corpus", p(s)]);
    }
    ok(&score);
    for (name, s) in ["train", "val", "test"].iter().zip(&splits) {
        let f = st.join(format!("features_{name}.csv"));
        ok(&["features", "--corpus", p(s), "--scores", p(&st.join("scores.jsonl")), "--out", p(&f)]);
        assert_eq!(fs::read(&f).unwrap(), fs::read(run.join(format!("features_{name}.csv"))).unwrap(), "{name}");
    }
    let (train_f, val_f, model) = (st.join("features_train.csv"), st.join("features_val.csv"), st.join("model.json"));
    let mut train = vec!["train", "--train", p(&train_f), "--val", p(&val_f), "--out", p(&model), "--seed", "4"];
    train.extend(DESK);
    ok(&train);
    assert_eq!(fs::read(st.join("model.json")).unwrap(), fs::read(run.join("model.json")).unwrap());

    let test_f = st.join("features_test.csv");
    ok(&["eval", "--model", p(&st.join("model.json")), "--features", p(&test_f), "--seed", "4", "--out", p(&st.join("metrics.json")), "--roc", p(&st.join("roc.csv"))]);
    let staged: Value = serde_json::from_str(&fs::read_to_string(st.join("metrics.json")).unwrap()).unwrap();
    let full: Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(staged["test"], full["test"]);
    assert_eq!(staged["random_baseline"], full["random_baseline"]);
    assert_eq!(fs::read(st.join("roc.csv")).unwrap(), fs::read(run.join("roc.csv")).unwrap());

    ok(&["importance", "--model", p(&st.join("model.json")), "--features", p(&test_f), "--seed", "4", "--repetitions", "2", "--csv", p(&st.join("importance.csv"))]);
    assert_eq!(fs::read(st.join("importance.csv")).unwrap(), fs::read(run.join("importance.csv")).unwrap());

    let transfer = ok(&["transfer", "--model", p(&st.join("model.json")), "--features", p(&test_f), "--in-domain", p(&run.join("metrics.json"))]);
    assert!(transfer.contains("degradation: F1 0.0%, AUC 0.0%"), "{transfer}");
}

#[test]
fn run_requires_a_seed_and_flags_failures_stale() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d, "s.jsonl", "60");
    let no_seed = d.join("noseed.json");
    fs::write(&no_seed, r#"{"corpus": "s.jsonl", "output_dir": "out"}"#).unwrap();
    assert_eq!(code(&bp(&["run", p(&no_seed)])), 1);

    let missing = d.join("missing.json");
    fs::write(&missing, r#"{"corpus": "gone.jsonl", "output_dir": "bad", "seed": 1}"#).unwrap();
    assert_eq!(code(&bp(&["run", p(&missing)])), 2);
    assert!(d.join("bad/.stale").is_file());

    let broken = d.join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    assert_eq!(code(&bp(&["run", p(&broken)])), 2);

    let dead = d.join("dead.json");
    fs::write(&dead, r#"{"corpus": "s.jsonl", "output_dir": "dead", "seed": 1, "scorer": {"kind": "external", "command": ["/nonexistent/sidecar"]}}"#).unwrap();
    assert_eq!(code(&bp(&["run", p(&dead)])), 3);
    assert!(d.join("dead/.stale").is_file());
}

#[test]
fn external_sidecar_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d, "s.jsonl", "60");
    let manifest = d.join("m.json");
    let m = serde_json::json!({
        "corpus": "s.jsonl",
        "output_dir": "ext",
        "seed": 2,
        "importance_repetitions": 1,
        "scorer": {"kind": "external", "command": [BIN, "stub-sidecar", "--name", "overlap"], "timeout_secs": 30},
        "train": {"learning_rate": 0.001, "max_epochs": 30, "patience": 3}
    });
    fs::write(&manifest, m.to_string()).unwrap();
    ok(&["run", p(&manifest)]);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(d.join("ext/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["scorer"], "overlap");
    assert!(metrics["test"]["auc"].as_f64().unwrap() > 0.8);
    let first = fs::read_to_string(d.join("ext/scores.jsonl")).unwrap();
    assert!(first.lines().count() > 100);
}

#[test]
fn score_command_talks_to_a_sidecar() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = synth(d, "s.jsonl", "5");
    let scores = d.join("scores.jsonl");
    let out = ok(&["score", "--corpus", p(&corpus), "--out", p(&scores), "--", BIN, "stub-sidecar", "--constant", "0.25"]);
    assert!(out.contains("from stub"), "{out}");
    for line in fs::read_to_string(&scores).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["score"], 0.25);
    }
    let f = d.join("f.csv");
    ok(&["features", "--corpus", p(&corpus), "--scores", p(&scores), "--out", p(&f)]);
    assert!(fs::read_to_string(&f).unwrap().lines().count() > 1);
    // A window-15 cache lacks pairs the unrestricted window needs.
    let wide = ["features", "--corpus", p(&corpus), "--scores", p(&scores), "--out", p(&f), "--relaxation", "inf"];
    assert_eq!(code(&bp(&wide)), 2);
    ok(&["score", "--corpus", p(&corpus), "--out", p(&scores), "--relaxation", "inf", "--", BIN, "stub-sidecar"]);
    ok(&wide);
}

#[test]
fn check_sidecar_reports_conformance() {
    let out = ok(&["check-sidecar", "--", BIN, "stub-sidecar"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{out}");
    let dead = bp(&["check-sidecar", "--timeout-secs", "2", "--", "/nonexistent/sidecar"]);
    assert_eq!(code(&dead), 3);
}

#[test]
fn mismatched_features_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let bogus = dir.path().join("f.csv");
    fs::write(&bogus, "conversation_id,k,label,a,b\nx,2,1,0.1,0.2\n").unwrap();
    let out = bp(&["train", "--train", p(&bogus), "--val", p(&bogus), "--out", p(&dir.path().join("m.json")), "--seed", "1"]);
    assert_eq!(code(&out), 2);
}
