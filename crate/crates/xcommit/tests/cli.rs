use std::path::Path;
use std::process::{Command, Output};

use xcommit::record::{from_json, read_csv, CSV_HEADER};
use xcommit::trace_io::{load_trace, save_trace};
use xcommit_core::trace::Outcome;

fn xcommit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcommit")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = "protocol = sbp\nn_chains = 3\nn_transactions = 60\n";

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    let trace = dir.path().join("t.json");
    let o = xcommit(&[
        "run", "--config", &conf, "--protocol", "rbp", "--seed", "7",
        "--out", out.to_str().unwrap(), "--csv", csv.to_str().unwrap(), "--trace", trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let record = from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(record.config.seed, 7);
    assert_eq!(record.summary.submitted, 60);
    assert!(record.pass());

    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows, record.rows());

    assert_eq!(xcommit(&["audit", "--trace", trace.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "n_chains = 3\nbogus = 1\n");
    let o = xcommit(&["run", "--config", &conf]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let conf = write_config(dir.path(), "n_chains = 1\n");
    assert_eq!(xcommit(&["run", "--config", &conf]).status.code(), Some(3));
}

#[test]
fn tampered_trace_fails_audit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let path = dir.path().join("t.json");
    let o = xcommit(&["run", "--config", &conf, "--trace", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let mut trace = load_trace(&path).unwrap();
    let t = trace.txns.iter_mut().find(|t| t.outcome == Outcome::Committed).expect("something committed");
    t.outcome = Outcome::Aborted;
    save_trace(&trace, &path).unwrap();
    assert_eq!(xcommit(&["audit", "--trace", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn scale_writes_one_record_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "n_transactions = 200\n");
    let out = dir.path().join("scale");
    let o = xcommit(&[
        "scale", "--config", &conf, "--chains", "2,4", "--protocols", "rbp,hub", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["rbp_2.json", "rbp_4.json", "hub_2.json", "hub_4.json", "scaling.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let csv = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
