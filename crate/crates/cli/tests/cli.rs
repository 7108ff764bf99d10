use std::path::Path;
use std::process::{Command, Output};

fn sinrsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinrsim")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn generate(dir: &Path, spec: &str) -> String {
    let path = dir.join("topo.json");
    let p = path.to_str().unwrap().to_string();
    let o = sinrsim(&["generate", "--spec", spec, "--seed", "1", "--out", &p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn generate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let topo = generate(dir.path(), "random:n=12,side=4,pmin=1,pmax=8");
    let o = sinrsim(&["analyze", "--topology", &topo]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&text(&o)).unwrap();
    assert_eq!(v["n"], 12);
    assert_eq!(v["nodes"].as_array().unwrap().len(), 12);
    let limit = v["interference_limit"].as_f64().unwrap();
    for node in v["nodes"].as_array().unwrap() {
        assert!(node["no_proximity_product"].as_f64().unwrap() >= 0.25);
        assert!(node["interference_alpha_hi"].as_f64().unwrap() <= limit);
    }
}

#[test]
fn broadcast_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let topo = generate(dir.path(), "clique:n=5");
    let summary = dir.path().join("s.json");
    let csv = dir.path().join("rows.csv");
    let o = sinrsim(&[
        "run-broadcast",
        "--protocol",
        "fixed",
        "--topology",
        &topo,
        "--seeds",
        "3",
        "--csv",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("verdict PASS"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 16);
    let r = sinrsim(&["report", "--summary", summary.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    assert!(text(&r).contains("success 100%"));
}

#[test]
fn failed_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let topo = generate(dir.path(), "clique:n=9");
    // the default slow-start budget is too short for a 9-clique
    let o = sinrsim(&["run-broadcast", "--protocol", "slowstart", "--topology", &topo, "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("verdict FAIL"));
    assert!(text(&o).contains("FAIL seed 0"));
}

#[test]
fn mis_run_prints_rows() {
    let dir = tempfile::tempdir().unwrap();
    let topo = generate(dir.path(), "clique:n=3");
    let o = sinrsim(&["run-mis", "--topology", &topo, "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = text(&o);
    assert!(out.starts_with("seed,node_id,mis,"));
    // one member per seed
    assert_eq!(out.lines().filter(|l| l.split(',').nth(2) == Some("true")).count(), 2);
}

#[test]
fn bad_input_is_an_error() {
    let o = sinrsim(&["run-coloring", "--topology", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(1));
    let o = sinrsim(&["generate", "--spec", "hexagon:n=3"]);
    assert_eq!(o.status.code(), Some(1));
}
