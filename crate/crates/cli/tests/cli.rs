use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sellside"))
}

fn simulate(dir: &Path, config: &str) -> PathBuf {
    let cfg = dir.join("sim.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("sim");
    let status = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    out
}

fn analyze(sim: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("analyze")
        .arg("--events").arg(sim.join("events.csv"))
        .arg("--assignments").arg(sim.join("assignments.csv"))
        .arg("--outcomes").arg(sim.join("outcomes.csv"))
        .arg("--out").arg(out)
        .args(["--replications", "200"])
        .args(extra)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

const SMALL: &str = r#"{"m": 400, "n": 120, "degree_dist": {"fixed": {"k": 3}}, "pre_corr": 0.5, "seed": 3}"#;

/// Rewrites outcomes.csv without its pre-period column.
fn drop_pre(sim: &Path) {
    let path = sim.join("outcomes.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    std::fs::write(&path, stripped).unwrap();
}

#[test]
fn full_success_exits_zero_and_draws_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = analyze(&sim, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["schema"], "sellside.report/v1");
    let results = r["results"].as_array().unwrap();
    assert_eq!(results.len(), 8);
    let svg = std::fs::read_to_string(out.join("forest.svg")).unwrap();
    assert_eq!(svg.matches(r#"<g class="row">"#).count(), results.len());
    assert!(out.join("exposure_histogram_view.csv").exists());
}

#[test]
fn partial_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), SMALL);
    drop_pre(&sim);
    let out = dir.path().join("out");
    let o = analyze(&sim, &out, &["--estimators", "erl,reg_pre", "--methods", "bootstrap"]);
    assert_eq!(o.status.code(), Some(2));
    let r = report(&out);
    let statuses: Vec<&str> = r["results"].as_array().unwrap().iter().map(|e| e["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["ok", "error"]);
}

#[test]
fn total_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), SMALL);
    drop_pre(&sim);
    let o = analyze(&sim, &dir.path().join("out"), &["--estimators", "crerl", "--methods", "bootstrap"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = analyze(&dir.path().join("nowhere"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn empty_estimator_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), SMALL);
    let o = analyze(&sim, &dir.path().join("out"), &["--estimators", ""]);
    assert_eq!(o.status.code(), Some(64), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn multi_variant_runs_report_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), SMALL);
    // move every fourth buyer into a third arm
    let path = sim.join("assignments.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let mut rewritten = format!("{}\n", lines.next().unwrap());
    for (i, l) in lines.enumerate() {
        let (b, v) = l.split_once(',').unwrap();
        rewritten += &format!("{b},{}\n", if i % 4 == 0 { "B" } else { v });
    }
    std::fs::write(&path, rewritten).unwrap();
    std::fs::write(
        sim.join("assignments.design.json"),
        r#"{"variants": [
            {"label": "Off", "probability": 0.375, "control": true},
            {"label": "On", "probability": 0.375, "control": false},
            {"label": "B", "probability": 0.25, "control": false}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = analyze(&sim, &out, &["--estimators", "erl", "--methods", "bootstrap"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let labels: Vec<&str> = r["graphs"].as_array().unwrap().iter().map(|g| g["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["view", "view|On-vs-Off"]);
    let p: Vec<f64> = r["graphs"].as_array().unwrap().iter().map(|g| g["design"]["probability"].as_f64().unwrap()).collect();
    assert!((p[0] - 0.375).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
}

#[test]
fn view_and_favorite_graphs_disagree_under_mediation() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(
        dir.path(),
        r#"{"m": 600, "n": 300, "degree_dist": {"fixed": {"k": 6}}, "seed": 12,
            "beta_dist": {"mean": 2.0, "sd": 0.1},
            "favorites": {"rate_control": 0.1, "rate_treated": 0.6}}"#,
    );
    let out = dir.path().join("out");
    let o = analyze(
        &sim,
        &out,
        &["--kinds", "view", "--kinds", "favorite", "--estimators", "reg", "--methods", "bootstrap", "--allow-missing-outcomes"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let tau = |g: &str| {
        r["results"].as_array().unwrap().iter().find(|e| e["graph"] == g).unwrap()["interval"]["point"]["tau_hat"]
            .as_f64()
            .unwrap()
    };
    let (view, fav) = (tau("view"), tau("favorite"));
    assert!((view - 2.0).abs() < 0.5, "view {view}");
    assert!((view - fav).abs() > 0.3, "view {view} favorite {fav}");
}

#[test]
fn validate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("val");
    let o = bin()
        .args(["validate", "--config"]).arg(&cfg)
        .args(["--replications", "100", "--inference-replications", "200", "--methods", "bootstrap"])
        .arg("--out").arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("validation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn pairwise_results_carry_their_caveat() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = analyze(&sim, &out, &["--estimators", "erl", "--methods", "pairwise_var,bootstrap"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let notes: Vec<bool> = r["results"].as_array().unwrap().iter().map(|e| e.get("note").is_some()).collect();
    assert_eq!(notes, [true, false]);
}
