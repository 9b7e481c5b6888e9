use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_evofactor");

/// AR(1) factor with a slowly modulated loading plus noise, from a small
/// LCG so the file is fixed without pulling in an RNG.
fn write_panel(dir: &Path, n: usize, p: usize) -> PathBuf {
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut uniform = || {
        state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    let mut normal = || {
        let (u, v) = (uniform(), uniform());
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    };
    let loading: Vec<f64> = (0..p).map(|_| normal()).collect();
    let mut f = 0.0;
    let mut text = String::new();
    for i in 0..n {
        f = 0.5 * f + normal();
        let scale = 1.0 + 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).sin();
        let row: Vec<String> = loading.iter().map(|a| format!("{:.6}", a * f * scale + normal())).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join("panel.csv");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("EVOFACTOR_THREADS", "2").output().unwrap()
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_valid(name: &str, doc: &Value) {
    let schema = schema(name);
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{name} report violates its schema: {msgs:?}");
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn estimate_reports_every_time_point() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), 200, 8);
    let plots = dir.path().join("plots");
    let out = run(&["estimate", "-i", input.to_str().unwrap(), "--plot-data", plots.to_str().unwrap(), "--with-vectors"]);
    let doc = report(&out);
    assert_valid("estimate", &doc);
    let records = doc["records"].as_array().unwrap();
    assert_eq!(records.len(), 200);
    for (i, r) in records.iter().enumerate() {
        assert!((r["t"].as_f64().unwrap() - (i + 1) as f64 / 200.0).abs() < 1e-12);
        assert_eq!(r["eigenvalues"].as_array().unwrap().len(), 8);
    }
    let dims = fs::read_to_string(plots.join("dimension.csv")).unwrap();
    assert_eq!(dims.lines().count(), 201);
}

#[test]
fn fixed_order_skips_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), 150, 5);
    let doc = report(&run(&["estimate", "-i", input.to_str().unwrap(), "--jn", "3", "--basis", "fourier"]));
    assert_valid("estimate", &doc);
    assert_eq!(doc["sieve"]["order"], 3);
    assert!(doc["sieve"]["order_selection"].is_null());
}

#[test]
fn test_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), 300, 10);
    let args = ["test", "-i", input.to_str().unwrap(), "--B", "300", "--seed", "7"];
    let first = run(&args);
    let second = run(&args);
    let doc = report(&first);
    assert_valid("test", &doc);
    assert_eq!(first.stdout, second.stdout);
    let p = doc["result"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(doc["result"]["bootstrap_draws"].as_array().unwrap().len(), 300);
}

#[test]
fn tune_and_predict_match_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), 300, 10);
    let input = input.to_str().unwrap();
    let tune = report(&run(&["tune", "-i", input, "--B", "200"]));
    assert_valid("tune", &tune);
    let out_path = dir.path().join("predict.json");
    let out = run(&["predict", "-i", input, "--eval-start", "200", "-o", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let predict: Value = serde_json::from_str(&fs::read_to_string(out_path).unwrap()).unwrap();
    assert_valid("predict", &predict);
    assert_eq!(predict["eval_start"], 200);
}

#[test]
fn simulate_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let args = [
        "simulate", "--design", "table3-model1", "--n", "200", "--p", "6", "--reps", "3", "--B", "200",
        "--table-csv", table.to_str().unwrap(),
    ];
    let doc = report(&run(&args));
    assert_valid("simulate", &doc);
    assert_eq!(doc["report"]["completed"], 3);
    let text = fs::read_to_string(table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("reject@0.05 rate"));
}

fn assert_error(out: &Output, module: &str) -> Value {
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    let doc: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_valid("error", &doc);
    assert_eq!(doc["error"]["module"], module);
    doc
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_error(&run(&["estimate", "-i", missing.to_str().unwrap()]), "panel-data");

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,2,3\n4,5\n").unwrap();
    let doc = assert_error(&run(&["estimate", "-i", ragged.to_str().unwrap()]), "panel-data");
    assert!(doc["error"]["cause"].as_str().unwrap().contains("row"));

    let input = write_panel(dir.path(), 50, 4);
    let input = input.to_str().unwrap();
    assert_error(&run(&["test", "-i", input, "--alpha", "1.5"]), "cli-reports");
    assert_error(&run(&["estimate", "-i", input, "--jn", "0"]), "cli-reports");
    assert_error(&run(&["no-such-command"]), "cli-reports");
}

#[test]
fn help_exits_cleanly() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("estimate"));
}
