use std::path::Path;
use std::process::Command;

fn psmr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_psmr")).args(args).output().unwrap()
}

fn run_into(dir: &Path, engine: &str) {
    let out = psmr(&[
        "run", "--engine", engine, "--threads", "2", "--replicas", "2", "--clients", "3", "--window", "4",
        "--commands", "60", "--keys", "20", "--mix", "read=0.4,update=0.3,insert=0.15,delete=0.15",
        "--seed", "3", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_then_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "psmr");
    for f in ["workload.toml", "cdep.toml", "exec.log", "delivery.log", "history.tsv", "metrics.csv", "metrics.json", "latency_cdf.tsv", "snapshot-r0.txt", "snapshot-r1.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let out = psmr(&["verify", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn tampered_output_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "smr");
    let path = dir.path().join("responses-r1.tsv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines[0].pop().unwrap();
    lines[0].push(if last == '0' { '1' } else { '0' });
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = psmr(&["verify", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn exhausted_budget_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "spsmr");
    let out = psmr(&["verify", "--run", dir.path().to_str().unwrap(), "--budget", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = psmr(&[
        "sweep", "--param", "threads", "--values", "1,2", "--engine", "spsmr", "--clients", "2",
        "--commands", "50", "--keys", "100", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("threads=1/history.tsv").exists());
    assert!(dir.path().join("threads=2/history.tsv").exists());
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn missing_run_directory_is_an_error() {
    let out = psmr(&["verify", "--run", "/nonexistent/run"]);
    assert_eq!(out.status.code(), Some(2));
}
