use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_meetsched"));
    c.env_remove("SCHED_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_writes_outputs_and_inspect_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "happy_two_person", "--out-dir", p(dir.path())]);
    stdout_json(&o);
    for f in ["metrics.json", "requests.csv", "transcript.jsonl", "state/agent.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 7);
    assert_eq!(metrics["scheduled"], 1);

    let state = dir.path().join("state");
    let shown = stdout_json(&run(&["inspect", "--request-id", "R0001", "--state-dir", p(&state)]));
    assert_eq!(shown["request"]["state"], "Scheduled");
    assert!(!shown["thread"].as_array().unwrap().is_empty());

    let missing = run(&["inspect", "--request-id", "R9999", "--state-dir", p(&state)]);
    assert_eq!(missing.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert_eq!(err["error"], "not_found");
}

#[test]
fn usage_errors_exit_two_and_help_lists_flags() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--seed", "x"]).status.code(), Some(2));
    let help = run(&["simulate", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in ["--scenario", "--seed", "--out-dir", "--live-workers", "--config", "--pretty"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn bad_config_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "reminder_hours = [").unwrap();
    let out = dir.path().join("o");
    let o = bin().args(["simulate", "--scenario", "phone", "--out-dir", p(&out)]).env("SCHED_CONFIG", &cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let o = run(&["--config", p(&dir.path().join("absent.toml")), "simulate", "--scenario", "phone", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corpus_train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, model) = (dir.path().join("c.jsonl"), dir.path().join("m.json"));
    stdout_json(&run(&["gen-corpus", "--seed", "3", "--ballots", "300", "--out", p(&corpus)]));
    let trained = stdout_json(&run(&["train-classifier", "--corpus", p(&corpus), "--out-model", p(&model), "--epochs", "200"]));
    assert!(trained["metrics"]["test_ballots"].as_u64().unwrap() > 0);
    let eval = stdout_json(&run(&["eval-classifier", "--model", p(&model), "--corpus", p(&corpus)]));
    for k in ["model", "baseline"] {
        for m in ["per_choice", "exact_subset"] {
            let v = eval[k][m].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{k}.{m} = {v}");
        }
    }
    assert!(eval["model"]["per_choice"].as_f64() > eval["baseline"]["per_choice"].as_f64());

    let pretty = bin().args(["--pretty", "eval-classifier", "--model", p(&model), "--corpus", p(&corpus)]).output().unwrap();
    assert!(String::from_utf8_lossy(&pretty.stdout).contains("model.per_choice"));
}

#[test]
fn single_check_runs_unattended() {
    let o = stdout_json(&run(&["check", "ics-round-trip"]));
    assert_eq!(o["passed"], true);
    assert_eq!(run(&["check", "not-a-check"]).status.code(), Some(2));
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/extractor.json");
    let ext = stdout_json(&run(&["eval-extractor", "--fixtures", p(&fixtures)]));
    assert_eq!(ext["both_correct"], 50);
}

#[test]
fn serve_answers_the_task_api() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin()
        .args(["serve", "--port", "0", "--snapshot-dir", p(dir.path())])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"].as_str().unwrap().to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /api/tasks/next?tier=micro&worker=w1 HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 204"), "{resp}");
}
