use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn vgame(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgame"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn body(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest
}

#[test]
fn list_scenarios_prints_builtins() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["list-scenarios"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.lines().any(|l| l == "scenario-5-2"));
    assert_eq!(s.lines().count(), 7);
}

#[test]
fn simulate_writes_one_row_per_path_and_node() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["simulate", "--scenario", "jump-only", "--grid-n", "8", "--paths", "100", "--seed", "3", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(d.path().join("o/ensemble.csv")).unwrap();
    for key in ["# scenario=jump-only", "# seed=3", "# cells=8", "# paths=100", "# horizon=1", "# version="] {
        assert!(text.lines().any(|l| l.starts_with(key)), "missing {key}");
    }
    let mut lines = body(&text).lines();
    assert_eq!(
        lines.next().unwrap(),
        "path,node,t,clock_b,clock_h,brownian_level,jump_level_1,jump_level_2,x"
    );
    assert_eq!(lines.count(), 100 * 9);
}

#[test]
fn output_does_not_depend_on_workers() {
    let d = TempDir::new().unwrap();
    let mut bodies = Vec::new();
    for (i, w) in ["1", "3", "1"].iter().enumerate() {
        let out = format!("o{i}");
        let o = vgame(
            d.path(),
            &["simulate", "--scenario", "scenario-5-1", "--grid-n", "16", "--paths", "300", "--workers", w, "--out", &out],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        bodies.push(fs::read(d.path().join(out).join("ensemble.csv")).unwrap());
    }
    assert!(bodies.iter().all(|b| b == &bodies[0]));

    let mut traces = Vec::new();
    for (i, w) in ["1", "2"].iter().enumerate() {
        let out = format!("s{i}");
        let o = vgame(
            d.path(),
            &["solve", "--scenario", "decoupled-quadratic", "--paths", "300", "--workers", w, "--out", &out],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        traces.push(fs::read(d.path().join(&out).join("residuals.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn json_format_embeds_metadata() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["simulate", "--scenario", "martingale", "--grid-n", "4", "--paths", "10", "--format", "json", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("o/ensemble.json")).unwrap()).unwrap();
    assert_eq!(v["metadata"]["paths"], 10);
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 50);
}

#[test]
fn zero_cells_is_a_config_error_naming_the_key() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["simulate", "--scenario", "martingale", "--grid-n", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid.cells"));

    fs::write(d.path().join("c.toml"), "scenario = \"martingale\"\n[grid]\ncells = 0\n").unwrap();
    let o = vgame(d.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid.cells"));
}

#[test]
fn unknown_keys_are_rejected() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("c.toml"), "scenario = \"martingale\"\npath = 10\n").unwrap();
    let o = vgame(d.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("path"), "{}", stderr(&o));

    fs::write(d.path().join("p.toml"), "scenario = \"scenario-5-2\"\n[params]\nalpha = 0.1\nbeta = 1.0\n").unwrap();
    let o = vgame(d.path(), &["simulate", "--config", "p.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));

    let o = vgame(d.path(), &["simulate", "--scenario", "no-such-game"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_files_are_io_errors() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["simulate", "--config", "absent.toml"]);
    assert_eq!(code(&o), 4);
    let o = vgame(d.path(), &["simulate", "--scenario", "absent-model.toml"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn scenario_files_carry_parameters() {
    let d = TempDir::new().unwrap();
    fs::write(
        d.path().join("model.toml"),
        "name = \"scenario-5-1\"\n[params]\nalpha0 = 0.3\ncells = 8\n",
    )
    .unwrap();
    fs::write(d.path().join("run.toml"), "scenario = \"model.toml\"\npaths = 20\n").unwrap();
    let o = vgame(d.path(), &["simulate", "--config", "run.toml", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(d.path().join("o/ensemble.csv")).unwrap();
    assert!(text.contains("# cells=8"));
    assert_eq!(body(&text).lines().count(), 1 + 20 * 9);
}

#[test]
fn numerical_failures_have_their_own_exit_code() {
    let d = TempDir::new().unwrap();
    fs::write(
        d.path().join("c.toml"),
        "scenario = \"scenario-5-2\"\npaths = 200\n[params]\ncells = 16\npi = [3.0]\n",
    )
    .unwrap();
    let o = vgame(d.path(), &["solve", "--config", "c.toml", "--out", "o"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn solve_and_verify_the_decoupled_game() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["solve", "--scenario", "decoupled-quadratic", "--paths", "500", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    let cand: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("o/candidate.json")).unwrap()).unwrap();
    assert_eq!(cand["converged"], true);
    let last = body(&trace).lines().last().unwrap();
    let norms: Vec<f64> = last.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(norms.iter().all(|&n| n <= 1e-6), "{last}");

    let o = vgame(
        d.path(),
        &["verify", "--scenario", "decoupled-quadratic", "--paths", "500", "--out", "o", "--candidate", "o/candidate.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"oracle:control") && names.contains(&"sufficient"));
}

#[test]
fn u_free_game_has_a_single_trace_row() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["solve", "--scenario", "u-free", "--paths", "200", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    assert_eq!(body(&trace).lines().count(), 2);
}

#[test]
fn recursive_utility_candidate_passes_the_oracles() {
    let d = TempDir::new().unwrap();
    fs::write(
        d.path().join("c.toml"),
        r#"scenario = "scenario-5-2"
paths = 1000

[grid]
cells = 16

[optimizer]
step = { rule = "secant", initial = 0.5, max_step = 20.0 }
max_iterations = 25
"#,
    )
    .unwrap();
    let o = vgame(d.path(), &["solve", "--config", "c.toml", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vgame(d.path(), &["verify", "--config", "c.toml", "--out", "o", "--candidate", "o/candidate.json"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.contains("PASS oracle:control"));
    assert!(out.contains("exp(-gamma t)"));
}

#[test]
fn saddle_candidate_is_checked_as_a_saddle() {
    let d = TempDir::new().unwrap();
    let o = vgame(d.path(), &["solve", "--scenario", "quadratic-saddle", "--paths", "500", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vgame(d.path(), &["verify", "--scenario", "quadratic-saddle", "--paths", "500", "--out", "o", "--candidate", "o/candidate.json"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.contains("PASS saddle"));
}

#[test]
fn bad_candidates_are_rejected() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("bad.json"), "{ \"scenario\": ").unwrap();
    let o = vgame(d.path(), &["verify", "--scenario", "martingale", "--candidate", "bad.json"]);
    assert_eq!(code(&o), 5);

    let o = vgame(d.path(), &["solve", "--scenario", "martingale", "--paths", "200", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vgame(d.path(), &["verify", "--scenario", "jump-only", "--paths", "200", "--candidate", "o/candidate.json"]);
    assert_eq!(code(&o), 5);
}
