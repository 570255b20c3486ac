use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mplab"));
    cmd.args(args).arg("--out").arg(dir.join("out")).arg("--quiet");
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

const K3: &str = r#"{"generator": {"complete": 3}}"#;

#[test]
fn filters_on_k3_has_three_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"graph": {K3}, "filters": [{{"kind": "gcn", "w": 1.0}}]}}"#);
    let out = run(dir.path(), &["filters"], Some(&cfg));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "filters.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "filter_id,eigen_index,eigenvalue,coefficient,abs_coefficient");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0,1.0,"));
    assert!(out.stdout.is_empty());
}

#[test]
fn several_filters_get_distinct_ids() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{"graph": {K3}, "filters": [{{"kind": "gcn", "w": 1.0}}, {{"kind": "chebyshev", "w": [0.5, 0.5]}}]}}"#
    );
    assert_eq!(run(dir.path(), &["filters"], Some(&cfg)).status.code(), Some(0));
    let csv = read(dir.path(), "filters.csv");
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["0", "0", "0", "1", "1", "1"]);
}

#[test]
fn missing_graph_file_names_the_path() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"graph": {"file": {"path": "/nonexistent/edges.txt"}}}"#;
    let out = run(dir.path(), &["filters"], Some(cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/edges.txt"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mplab"))
        .args(["sca", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.json"));
    drop(dir);
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["decay"], Some(r#"{"iterationz": 3}"#));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn edge_list_file_is_loaded() {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("edges.txt");
    std::fs::write(&edges, "0 1\n1 2\n2 0\n").unwrap();
    let cfg = format!(r#"{{"graph": {{"file": {{"path": {:?}}}}}}}"#, edges.to_str().unwrap());
    assert_eq!(run(dir.path(), &["filters"], Some(&cfg)).status.code(), Some(0));
    assert_eq!(read(dir.path(), "filters.csv").lines().count(), 4);
}

#[test]
fn sca_on_k3_reports_ratio_two() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"graph": {K3}, "pairs": [[0, 1]]}}"#);
    assert_eq!(run(dir.path(), &["sca"], Some(&cfg)).status.code(), Some(0));
    let v = json(dir.path(), "sca.json");
    let r = &v["reports"][0];
    assert_eq!(v["method"], "sym");
    assert!((r["ratio"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(r["holds"], true);
}

#[test]
fn split_on_k3_puts_every_edge_in_relation_three() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"graph": {K3}, "ordering": "degree"}}"#);
    assert_eq!(run(dir.path(), &["split"], Some(&cfg)).status.code(), Some(0));
    let csv = read(dir.path(), "relations.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",3")));
    assert_eq!(json(dir.path(), "independence.json")["relation_sizes"], serde_json::json!([0, 0, 6]));
}

#[test]
fn star_split_has_independent_center() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"graph": {"generator": {"star": 3}}}"#;
    assert_eq!(run(dir.path(), &["split"], Some(cfg)).status.code(), Some(0));
    let v = json(dir.path(), "independence.json");
    assert_eq!(v["report"]["pairs"][0][1], true);
    assert_eq!(v["report"]["pairs"][1][2], false);
}

#[test]
fn pprgnn_identity_instance_is_e_times_h0() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{"graph": {K3}, "agg": "identity", "w": "identity", "h0": "ones", "d": 2, "epsilon": 1.0, "depth": 10}}"#
    );
    assert_eq!(run(dir.path(), &["pprgnn"], Some(&cfg)).status.code(), Some(0));
    let csv = read(dir.path(), "h.csv");
    for line in csv.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - std::f64::consts::E).abs() < 3e-8, "{line}");
    }
}

#[test]
fn pprgnn_gradcheck_passes_on_tanh() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"graph": {"generator": {"cycle": 5}}, "activation": "tanh", "j": 0, "m": 40, "depth": 6, "gradcheck": true}"#;
    let out = run(dir.path(), &["pprgnn"], Some(cfg));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path(), "gradcheck.csv").starts_with("param,analytic,numeric,rel_err\n"));
}

#[test]
fn truncated_gradcheck_is_an_assertion_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"graph": {"generator": {"cycle": 5}}, "activation": "tanh", "j": 0, "m": 1, "depth": 6, "w_std": 1.5, "gradcheck": true}"#;
    assert_eq!(run(dir.path(), &["pprgnn"], Some(cfg)).status.code(), Some(1));
}

#[test]
fn decay_with_zero_iterations_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["decay"], Some(r#"{"iterations": 0}"#));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decay_gcn_energy_falls_and_skp_rod_persists() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"variant": "gcn", "iterations": 96, "seeds": [0, 1], "metrics": ["E_sym"]}"#;
    assert_eq!(run(dir.path(), &["decay"], Some(cfg)).status.code(), Some(0));
    let csv = read(dir.path(), "decay.csv");
    let mean = |it: usize| -> f64 {
        let prefix = format!("{it},E_sym,mean,");
        csv.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap().parse().unwrap()
    };
    assert!(mean(96) < 1e-3 * mean(0));

    let cfg = r#"{"variant": "skp", "iterations": 96, "metrics": ["ROD"], "w_std": 0.35355339059327373}"#;
    assert_eq!(run(dir.path(), &["decay"], Some(cfg)).status.code(), Some(0));
    let csv = read(dir.path(), "decay.csv");
    let rods: Vec<f64> = csv
        .lines()
        .filter(|l| l.contains(",ROD,0,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(rods.len(), 97);
    assert!(rods.iter().all(|r| *r > 0.1), "{rods:?}");
}

#[test]
fn lmgc_probe_softmax_fails_threshold() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["lmgc-probe"], Some(r#"{"weight_fn": {"kind": "softmax_heads"}, "min_passes": 99}"#));
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir.path(), &["lmgc-probe"], Some(r#"{"min_passes": 99}"#));
    assert_eq!(out.status.code(), Some(0));
    assert!(json(dir.path(), "probe.json")["independence"]["passes"].as_u64().unwrap() >= 99);
}

#[test]
fn training_commands_write_traces() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["train-synthetic", "--seed", "3"], Some(r#"{"l": 2, "steps": 40, "record_every": 10}"#));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path(), "train.csv").starts_with("step,seed,metric,value\n"));
    assert_eq!(json(dir.path(), "summary.json")["seeds"][0]["seed"], 3);

    let out = run(dir.path(), &["fit-target"], Some(r#"{"n": 4, "d": 2, "steps": 50, "seeds": [0], "lrs": [0.01]}"#));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(dir.path(), "summary.json")["mean_final_loss"].as_f64().unwrap().is_finite());
}

#[test]
fn outputs_are_byte_reproducible() {
    let configs = [
        ("decay", r#"{"variant": "row_stochastic", "iterations": 30, "seeds": [4, 5]}"#),
        ("decay", r#"{"variant": "mrs", "iterations": 20}"#),
        ("decay", r#"{"variant": "sage", "iterations": 20}"#),
        ("sca", r#"{"graph": {"generator": {"erdos_renyi": {"n": 8, "p": 0.5, "seed": 2}}}, "agg": "rw"}"#),
        ("lmgc-probe", r#"{"trials": 10}"#),
        ("pprgnn", r#"{"gradcheck": true, "j": 0, "m": 50}"#),
        ("split", r#"{"ordering": "random", "graph": {"generator": "karate_club"}}"#),
    ];
    for (cmd, cfg) in configs {
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        assert_eq!(run(a.path(), &[cmd], Some(cfg)).status.code(), Some(0), "{cmd} {cfg}");
        assert_eq!(run(b.path(), &[cmd], Some(cfg)).status.code(), Some(0));
        for entry in std::fs::read_dir(a.path().join("out")).unwrap() {
            let name = entry.unwrap().file_name();
            let name = name.to_str().unwrap();
            assert_eq!(read(a.path(), name), read(b.path(), name), "{cmd} {name}");
        }
    }
}
