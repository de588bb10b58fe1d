use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hnmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hnmc")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CONLL: &str = "\
-DOCSTART- O

John B-PER
lives O
in O
Paris B-LOC

Mary B-PER
visited O
Berlin B-LOC
today O
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&hnmc(&["--help"])), 0);
    assert_eq!(code(&hnmc(&["--version"])), 0);
    assert_eq!(code(&hnmc(&[])), 1);
    assert_eq!(code(&hnmc(&["train", "--model", "lstm", "--synthetic", "lookahead"])), 1);
    assert_eq!(code(&hnmc(&["train", "--model", "rnn", "--train", "/no/such/file.conll", "--one-hot"])), 1);
}

#[test]
fn verify_passes_and_catches_a_fault() {
    let ok = hnmc(&["verify", "--seeds", "10"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).lines().any(|l| l.starts_with("PASS efb vs enumeration")));
    assert_eq!(code(&hnmc(&["verify", "--seeds", "10", "--inject-fault", "shift-observations"])), 2);
    assert_eq!(code(&hnmc(&["verify", "--max-length", "9"])), 1);
}

#[test]
fn synthetic_training_writes_checkpoints_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "run");
    let res = hnmc(&[
        "train", "--model", "hnmc", "--synthetic", "hmm_sampled", "--train-size", "60", "--dev-size", "30",
        "--epochs", "2", "--repeats", "3", "--seed", "4", "--out", &out, "-q",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout(&res).contains("over 3 runs"));
    for seed in 4..7 {
        assert!(dir.path().join(format!("run/seed-{seed}.ckpt")).exists());
        assert!(dir.path().join(format!("run/seed-{seed}.log.json")).exists());
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 3);
    assert!(manifest["summary"]["ci95_half_width"].is_number());

    let ckpt = path(dir.path(), "run/seed-4.ckpt");
    let eval = hnmc(&["evaluate", "--checkpoint", &ckpt, "--synthetic", "hmm_sampled", "--data-seed", "4", "--size", "20"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(stdout(&eval).starts_with("accuracy"));
    let wrong = hnmc(&["evaluate", "--checkpoint", &ckpt, "--synthetic", "lookahead", "--size", "20"]);
    assert_eq!(code(&wrong), 1);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = path(dir.path(), run);
        let res = hnmc(&[
            "train", "--model", "hnmc-cn", "--synthetic", "lookahead", "--train-size", "40", "--dev-size", "20",
            "--epochs", "2", "--seed", "8", "--out", &out, "-q",
        ]);
        assert_eq!(code(&res), 0);
        files.push(fs::read(dir.path().join(run).join("seed-8.ckpt")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn conll_training_then_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.conll", CONLL);
    let out = path(dir.path(), "model");
    let res = hnmc(&[
        "train", "--model", "birnn", "--train", &train, "--one-hot", "--epochs", "150", "--batch-size", "2",
        "--lr", "0.05", "--out", &out, "-q",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let ckpt = path(dir.path(), "model/seed-1.ckpt");

    let input = write(dir.path(), "input.txt", "John\nlives\nin\nParis\n\nMary\nvisited\nBerlin\ntoday\n");
    let labelled = path(dir.path(), "labelled.conll");
    let res = hnmc(&["predict", "--checkpoint", &ckpt, "--input", &input, "--output", &labelled]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    // Every sentence, the last one included, ends with a blank line.
    let gold = CONLL.lines().skip(2).collect::<Vec<_>>().join("\n") + "\n\n";
    assert_eq!(fs::read_to_string(&labelled).unwrap(), gold);

    let empty = write(dir.path(), "empty.txt", "");
    let empty_out = path(dir.path(), "empty.out");
    assert_eq!(code(&hnmc(&["predict", "--checkpoint", &ckpt, "--input", &empty, "--output", &empty_out])), 0);
    assert_eq!(fs::read_to_string(&empty_out).unwrap(), "");

    let eval = hnmc(&["evaluate", "--checkpoint", &ckpt, "--input", &train, "--metric", "span-f1"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn embedding_width_mismatch_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.conll", CONLL);
    let emb3 = write(dir.path(), "e3.txt", "John 1 0 0\nParis 0 1 0\nBerlin 0 0 1\n");
    let emb2 = write(dir.path(), "e2.txt", "John 1 0\nParis 0 1\n");
    let out = path(dir.path(), "m");
    let res = hnmc(&["train", "--model", "rnn", "--train", &train, "--embeddings", &emb3, "--epochs", "1", "--out", &out, "-q"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let ckpt = path(dir.path(), "m/seed-1.ckpt");
    let res = hnmc(&["evaluate", "--checkpoint", &ckpt, "--input", &train, "--embeddings", &emb2]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "d");
    let res = hnmc(&[
        "train", "--model", "hnmc", "--synthetic", "hmm_sampled", "--train-size", "20", "--dev-size", "10",
        "--epochs", "3", "--optimizer", "sgd", "--lr", "1e300", "--activation", "exp", "--out", &out, "-q",
    ]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}
