use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn htrcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htrcf"))
        .args(args)
        .env_remove("HTRCF_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MINIMAL: &str = r#"{"seed": 3, "node_count": 1, "duration_ms": 0, "crypto": {"rsa_bits": 64}}"#;

const CHURNED: &str = r#"{
  "seed": 5,
  "node_count": 8,
  "standby_count": 1,
  "duration_ms": 20000,
  "crypto": {"rsa_bits": 64},
  "churn": [
    {"time_ms": 1000, "action": "leave", "node": 2},
    {"time_ms": 2000, "action": "join", "node": 8}
  ]
}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.json", MINIMAL);
    let out = dir.path().join("out");
    let o = htrcf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trace.jsonl", "report.json", "report.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rekey_count"], 1);
    assert_eq!(report["groups_formed"], 1);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(stdout(&o).contains("ht-rcf"));
}

#[test]
fn run_is_reproducible_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", CHURNED);
    let trace = |out: &str, seed: Option<&str>| {
        let out = dir.path().join(out);
        let mut args = vec!["run", "--config", &cfg, "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = htrcf(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("trace.jsonl")).unwrap()
    };
    let a = trace("a", None);
    assert_eq!(a, trace("b", None));
    assert_ne!(a, trace("c", Some("99")));
}

#[test]
fn full_trace_adds_ciphertexts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", CHURNED);
    let plain = dir.path().join("plain");
    let full = dir.path().join("full");
    assert!(htrcf(&["run", "--config", &cfg, "--out", plain.to_str().unwrap()]).status.success());
    assert!(htrcf(&["run", "--config", &cfg, "--out", full.to_str().unwrap(), "--full-trace"])
        .status
        .success());
    let p = fs::read_to_string(plain.join("transcripts.jsonl")).unwrap();
    let f = fs::read_to_string(full.join("transcripts.jsonl")).unwrap();
    assert!(!p.contains("ciphertext"));
    assert!(f.contains("ciphertext"));
    assert_eq!(p.lines().count(), f.lines().count());
}

#[test]
fn churn_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = CHURNED.replace(r#""node": 8}"#, r#""node": 42}"#);
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let out = dir.path().join("never");
    let o = htrcf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json:9:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("unknown node 42"));
    assert!(!out.exists(), "output dir touched before validation");
}

#[test]
fn io_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.json", MINIMAL);
    let file = dir.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let o = htrcf(&["run", "--config", &cfg, "--out", file.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    let o = htrcf(&["run", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", r#"{"node_count": 3, "colour": 1}"#);
    let o = htrcf(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", CHURNED);
    let o = htrcf(&["compare", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for needle in ["power", "time", "messages", "ht-rcf", "baseline", "paper-reported", "Group 1"] {
        assert!(text.contains(needle), "{needle} missing");
    }
    let o = htrcf(&["compare", "--config", &cfg, "--json", "--seed", "11"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["rows"].as_array().unwrap().len(), 8);
    assert_eq!(v["reference_label"], "paper-reported");
}

#[test]
fn keygen_is_deterministic() {
    let a = htrcf(&["keygen", "--node-id", "7", "--bits", "64"]);
    let b = htrcf(&["keygen", "--node-id", "7", "--bits", "64"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("round trip: ok"));
    assert!(stdout(&a).contains("k = "));
    let e = htrcf(&["keygen", "--node-id", "7", "--bits", "64", "--entropy"]);
    assert!(stdout(&e).contains("round trip: ok"));
    let small = htrcf(&["keygen", "--node-id", "7", "--bits", "8"]);
    assert_eq!(small.status.code(), Some(1));
}

#[test]
fn handshake_demo_outcomes() {
    let ok = htrcf(&["handshake-demo", "--seed", "4", "--toy"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("verified"));
    let bad = htrcf(&["handshake-demo", "--initiator", "substitute-key"]);
    assert!(bad.status.success());
    assert!(stdout(&bad).contains("rejected"));
}

#[test]
fn trace_filters_by_kind_and_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", CHURNED);
    let out = dir.path().join("o");
    assert!(htrcf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let path = out.join("trace.jsonl");
    let o = htrcf(&["trace", "--path", path.to_str().unwrap(), "--kind", "leave"]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains(r#""node":2"#));
    let o = htrcf(&["trace", "--path", path.to_str().unwrap(), "--node", "8", "--kind", "Join"]);
    assert_eq!(stdout(&o).lines().count(), 1);
    let o = htrcf(&["trace", "--path", path.to_str().unwrap(), "--kind", "teleport"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(htrcf(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(htrcf(&["frobnicate"]).status.code(), Some(1));
    for cmd in ["run", "compare", "keygen", "handshake-demo", "trace"] {
        let o = htrcf(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd} --help");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn shipped_configs_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let o = htrcf(&["run", "--config", p.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
    }
}
