use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qobs_cli::ExperimentConfig;
use serde_json::Value;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str) -> String {
    std::fs::read_to_string(configs_dir().join(name)).unwrap()
}

fn qobs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qobs")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn run_in(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    qobs(&args)
}

fn json_rows(output: &Output) -> Vec<Value> {
    serde_json::from_slice::<Value>(&output.stdout).unwrap().as_array().unwrap().clone()
}

fn report_value(output: &Output, key: &str) -> Value {
    json_rows(output)
        .into_iter()
        .find(|r| r["quantity"] == key)
        .map(|r| r["value"].clone())
        .unwrap_or_else(|| panic!("no {key} in report"))
}

#[test]
fn min_levels_reproduces_pendulum_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &shipped("pendulum_full.toml"));
    let out = run_in(dir.path(), "min-levels", &cfg, &["--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = json_rows(&out);
    let row = |method: &str| rows.iter().find(|r| r["method"] == method).unwrap().clone();
    assert_eq!(row("pseudo_inverse")["N"], 4);
    assert_eq!(row("pseudo_inverse")["data_size"], "16");
    assert_eq!(row("state_encoding")["N"], 4);
    assert_eq!(row("state_encoding")["data_size"], "256");
    assert_eq!(row("configured_observer")["N"], 5);
    assert_eq!(row("deadbeat")["N"], 4);
    let csv = std::fs::read_to_string(dir.path().join("out/min_levels.csv")).unwrap();
    assert!(csv.starts_with("method,condition,N,exponent,data_size\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn certify_full_protocol_is_contractive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &shipped("pendulum_full.toml"));
    let out = run_in(dir.path(), "certify", &cfg, &["--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report_value(&out, "r(F)").as_f64().unwrap();
    assert!(r < 1.0 && (r - 0.8845).abs() <= 0.10);
    assert_eq!(report_value(&out, "contractive"), Value::Bool(true));
    assert_eq!(report_value(&out, "N1"), 301);
    assert!(dir.path().join("out/certify.csv").exists());
}

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &shipped("pendulum_full.toml"));
    let out = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let trace = std::fs::read_to_string(o.join("trace.csv")).unwrap();
    let header = trace.lines().next().unwrap();
    assert!(header.starts_with("k,t,x0,x1,x2,x3,xhat0,"));
    assert!(header.ends_with(",E,E1,E2,overflow"));
    assert_eq!(trace.lines().count(), 202);
    assert!(trace.lines().skip(1).all(|l| l.ends_with(",0")));
    let schedule = std::fs::read_to_string(o.join("schedule.csv")).unwrap();
    assert!(schedule.starts_with("k,E_k,E1_k,E2_k,mu_k\n"));
    let svg = std::fs::read_to_string(o.join("response.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(o.join("run.toml").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &shipped("pendulum_general.toml"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for o in [&a, &b] {
        let out = qobs(&["simulate", "--config", &cfg, "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["trace.csv", "schedule.csv", "response.svg", "run.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_toml_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", &shipped("pendulum_deadbeat.toml"));
    let first = dir.path().join("first");
    assert_eq!(qobs(&["simulate", "--config", &cfg, "--out", first.to_str().unwrap()]).status.code(), Some(0));
    let original = ExperimentConfig::load(Path::new(&cfg)).unwrap();
    let saved = ExperimentConfig::load(&first.join("run.toml")).unwrap();
    assert_eq!(original, saved);

    let rerun_cfg = first.join("run.toml");
    let second = dir.path().join("second");
    let out = qobs(&["simulate", "--config", rerun_cfg.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read(first.join("trace.csv")).unwrap(),
        std::fs::read(second.join("trace.csv")).unwrap()
    );
}

#[test]
fn zero_initial_state_gives_zero_trace() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped("pendulum_full.toml").replace("x0 = [0.0, 0.0, 0.1, 0.0]", "x0 = [0.0, 0.0, 0.0, 0.0]");
    let cfg = write_config(dir.path(), "p.toml", &text);
    assert_eq!(run_in(dir.path(), "simulate", &cfg, &[]).status.code(), Some(0));
    let mut reader = csv::Reader::from_path(dir.path().join("out/trace.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let state_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x') || h.starts_with("Q2_u") || h.starts_with('u'))
        .map(|(i, _)| i)
        .collect();
    for rec in reader.records() {
        let rec = rec.unwrap();
        for &i in &state_cols {
            assert_eq!(rec[i].parse::<f64>().unwrap(), 0.0, "{}", &headers[i]);
        }
    }
}

#[test]
fn violated_initial_bound_exits_with_overflow() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped("pendulum_full.toml").replace("e_st = 0.15", "e_st = 0.01");
    let cfg = write_config(dir.path(), "p.toml", &text);
    let out = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning") && stderr.contains("overflow"), "{stderr}");
    let trace = std::fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert!(trace.lines().last().unwrap().ends_with(",1"));
}

#[test]
fn rate_below_observer_radius_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped("pendulum_general.toml").replace("rho = \"sweep\"", "rho = { fixed = { rho = 0.5 } }");
    let cfg = write_config(dir.path(), "p.toml", &text);
    assert_eq!(run_in(dir.path(), "certify", &cfg, &[]).status.code(), Some(3));
}

#[test]
fn too_few_levels_are_reported_as_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped("pendulum_general.toml").replace("levels = \"auto\"", "levels = { n = 2 }");
    let cfg = write_config(dir.path(), "p.toml", &text);
    let out = run_in(dir.path(), "certify", &cfg, &["--format", "json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(report_value(&out, "contractive"), Value::Bool(false));
}

#[test]
fn bad_configs_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.toml", &format!("{}\nbogus = 1\n", shipped("pendulum_full.toml")));
    assert_eq!(run_in(dir.path(), "certify", &unknown, &[]).status.code(), Some(4));
    let missing = dir.path().join("missing.toml");
    assert_eq!(run_in(dir.path(), "certify", missing.to_str().unwrap(), &[]).status.code(), Some(4));
    let wrong_x0 = write_config(
        dir.path(),
        "x.toml",
        &shipped("pendulum_full.toml").replace("x0 = [0.0, 0.0, 0.1, 0.0]", "x0 = [0.0, 0.1]"),
    );
    assert_eq!(run_in(dir.path(), "simulate", &wrong_x0, &[]).status.code(), Some(4));
}

#[test]
fn batch_runs_each_config_and_reports_worst_code() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.toml", &shipped("pendulum_general.toml"));
    let bad = write_config(dir.path(), "bad.toml", &shipped("pendulum_full.toml").replace("e_st = 0.15", "e_st = 0.01"));
    let out_dir = dir.path().join("batch");
    let out = qobs(&["batch", &good, &bad, "--out", out_dir.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(2));
    let rows = json_rows(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["config"], "good");
    assert_eq!(rows[0]["exit_code"], 0);
    assert_eq!(rows[1]["exit_code"], 2);
    assert!(out_dir.join("good/trace.csv").exists() && out_dir.join("bad/trace.csv").exists());
}
