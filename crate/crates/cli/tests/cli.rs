use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use s6_dynamics::fixtures;
use s6_dynamics::scenario::{blowup_bound, classify, ScenarioReport};
use serde_json::Value;

fn s6dyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s6dyn")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Parses a CSV and checks it is rectangular with finite numeric fields.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    for row in &rows {
        assert_eq!(row.len(), header.len());
        assert!(row.iter().all(|v| v.is_finite()));
    }
    (header, rows)
}

#[test]
fn simulate_convergent_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("convergence.json"), "--out-dir", out, "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = parse_csv(&std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap());
    assert_eq!(header[0], "t");
    assert_eq!(header[1], "x_1");
    assert_eq!(header.len(), 11);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    for col in 1..11 {
        assert!(rows.windows(2).all(|w| w[1][col].abs() < w[0][col].abs()), "column {col}");
    }

    let (header, rows) = parse_csv(&std::fs::read_to_string(dir.path().join("attention.csv")).unwrap());
    assert_eq!(header, ["t", "ch", "l", "j", "P"]);
    assert_eq!(rows.len() % 55, 0);

    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["rng"], "chacha8");
    assert_eq!(report["scenario"]["label"], "Convergence");
    assert_eq!(report["integration"]["status"], "completed");
    assert_eq!(report["blowup"]["detected"], false);
    assert_eq!(report["fits"].as_array().unwrap().len(), 10);
}

#[test]
fn simulate_fast_fixture_reports_blowup() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("fast_divergence.json"), "--out-dir", out, "simulate"]);
    assert!(o.status.success());
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["integration"]["status"], "blowup_detected");
    assert_eq!(report["blowup"]["detected"], true);
    let f = fixtures::fast_divergence();
    let bound = blowup_bound(&f.params, &f.x0).unwrap().min;
    let t = report["blowup"]["blowup_time"].as_f64().unwrap();
    assert!(t > 0.0 && t <= 1.1 * bound);
    let est = report["blowup_estimate"].as_f64().unwrap();
    assert!(est >= t && est <= 1.1 * bound);
}

#[test]
fn multichannel_csv_is_blocked_by_channel() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("random.json"), "--out-dir", out, "simulate"]);
    assert!(o.status.success());
    let (header, rows) = parse_csv(&std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap());
    assert_eq!(&header[..3], ["t", "ch", "x_1"]);
    assert_eq!(header.len(), 2 + 6);
    let per_channel = rows.len() / 3;
    assert_eq!(rows.len(), 3 * per_channel);
    for (c, block) in rows.chunks(per_channel).enumerate() {
        assert!(block.iter().all(|r| r[1] == (c + 1) as f64));
        assert!(block.windows(2).all(|w| w[1][0] > w[0][0]));
    }
    // random draws are embedded in the report
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["seed"], 7);
    assert_eq!(report["inputs"]["x0"].as_array().unwrap().len(), 3);
}

#[test]
fn seed_flag_changes_random_draws() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let o = s6dyn(&["--config", &config("random.json"), "--out-dir", d.to_str().unwrap(), "--seed", seed, "classify"]);
        assert!(o.status.success());
    }
    let ra = read_json(a.join("report.json"));
    let rb = read_json(b.join("report.json"));
    assert_eq!(ra["seed"], 1);
    assert_ne!(ra["inputs"], rb["inputs"]);
}

#[test]
fn classify_prints_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"fixture": "planar_negative"}"#);
    let o = s6dyn(&["--config", &cfg, "--out-dir", dir.path().to_str().unwrap(), "classify"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("label: Convergence (conjectural)"));

    let o = s6dyn(&["--config", &config("fast_divergence.json"), "--out-dir", dir.path().to_str().unwrap(), "classify"]);
    assert!(stdout(&o).contains("label: FastDivergence"));
}

#[test]
fn report_round_trips_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("slow_divergence.json"), "--out-dir", out, "classify"]);
    assert!(o.status.success());
    let report = read_json(dir.path().join("report.json"));
    let parsed: ScenarioReport = serde_json::from_value(report["scenario"].clone()).unwrap();
    let f = fixtures::slow_divergence_ordered();
    assert_eq!(parsed, classify(&f.params, &f.x0).unwrap());
}

#[test]
fn fit_rates_reports_log_powers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("slow_divergence.json"), "--out-dir", out, "fit-rates"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("logpower"));
    let report = read_json(dir.path().join("report.json"));
    let fits = report["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 5);
    for (l, fit) in fits.iter().enumerate() {
        assert_eq!(fit["power"], l as u64 + 1);
        assert!(fit["slope"].as_f64().unwrap() <= l as f64 + 1.5);
    }
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // unreadable or malformed config
    assert_eq!(s6dyn(&["--config", "/nonexistent/cfg.json", "simulate"]).status.code(), Some(2));
    let bad = write_config(dir.path(), "{ not json");
    assert_eq!(s6dyn(&["--config", &bad, "--out-dir", out, "simulate"]).status.code(), Some(2));
    // missing --config, unknown flag
    assert_eq!(s6dyn(&["simulate"]).status.code(), Some(2));
    assert_eq!(s6dyn(&["simulate", "--bogus"]).status.code(), Some(2));
    // validation failures
    let empty = write_config(
        dir.path(),
        r#"{"params": {"scalar": {"mu": 1.0, "s_delta": -1.0, "a": 1.0}}, "x0": [[]], "t_end": 1.0}"#,
    );
    assert_eq!(s6dyn(&["--config", &empty, "--out-dir", out, "simulate"]).status.code(), Some(3));
    let two_sources = write_config(
        dir.path(),
        r#"{"fixture": "convergence", "x0": [[1.0]], "t_end": 1.0}"#,
    );
    assert_eq!(s6dyn(&["--config", &two_sources, "--out-dir", out, "simulate"]).status.code(), Some(3));
    let bad_decay = write_config(
        dir.path(),
        r#"{"params": {"scalar": {"mu": 1.0, "s_delta": -1.0, "a": -1.0}}, "x0": [[1.0]], "t_end": 1.0}"#,
    );
    assert_eq!(s6dyn(&["--config", &bad_decay, "--out-dir", out, "simulate"]).status.code(), Some(3));
    let no_t_end = write_config(dir.path(), r#"{"fixture": "convergence"}"#);
    assert_eq!(s6dyn(&["--config", &no_t_end, "--out-dir", out, "simulate"]).status.code(), Some(3));
    let zero_token = write_config(
        dir.path(),
        r#"{"params": {"scalar": {"mu": 1.0, "s_delta": -1.0, "a": 1.0}}, "x0": [[1.0, 0.0]]}"#,
    );
    assert_eq!(s6dyn(&["--config", &zero_token, "--out-dir", out, "classify"]).status.code(), Some(3));
    assert_eq!(s6dyn(&["reorder-demo", "--len", "0"]).status.code(), Some(2));
    assert_eq!(s6dyn(&["reorder-demo", "--tau", "-1"]).status.code(), Some(2));
}

#[test]
fn reorder_demo_hard_sort_and_uniform_rows() {
    let o = s6dyn(&["--seed", "3", "reorder-demo", "--len", "6", "--channels", "2", "--tau", "1e-6"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let again = stdout(&s6dyn(&["--seed", "3", "reorder-demo", "--len", "6", "--channels", "2", "--tau", "1e-6"]));
    assert_eq!(text, again);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--seed", "3", "--out-dir", out, "reorder-demo", "--len", "6", "--tau", "1e-6"]);
    assert!(o.status.success());
    let report = read_json(dir.path().join("report.json"));
    let scores: Vec<f64> = serde_json::from_value(report["scores"].clone()).unwrap();
    let hard: Vec<usize> = serde_json::from_value(report["hard_permutation"].clone()).unwrap();
    let mut expected: Vec<usize> = (0..6).collect();
    expected.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    assert_eq!(hard, expected);
    let soft: Vec<Vec<f64>> = serde_json::from_value(report["soft_permutation"].clone()).unwrap();
    for (i, row) in soft.iter().enumerate() {
        let argmax = (0..6).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmax, expected[i]);
    }

    let o = s6dyn(&["--out-dir", out, "reorder-demo", "--len", "4", "--zero-k"]);
    assert!(o.status.success());
    let report = read_json(dir.path().join("report.json"));
    let soft: Vec<Vec<f64>> = serde_json::from_value(report["soft_permutation"].clone()).unwrap();
    assert!(soft.iter().flatten().all(|v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn paramcheck_reports_sign_patterns() {
    for regime in ["positive", "negative", "mixed"] {
        for dim in ["2", "5", "16"] {
            let o = s6dyn(&["--seed", "9", "paramcheck", "--dim", dim, "--regime", regime]);
            assert!(o.status.success(), "{regime} {dim}");
            assert!(stdout(&o).contains("PASS"));
        }
    }
    let o = s6dyn(&["--seed", "9", "paramcheck", "--dim", "3", "--regime", "mixed"]);
    assert!(stdout(&o).contains("requested signs: ++-"));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("ldl_mixed.json"), "--out-dir", out, "paramcheck"]);
    assert!(o.status.success());
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["obtained_signs"], serde_json::json!([1, -1]));
    assert_eq!(report["seed"], Value::Null);
}

#[test]
fn ldl_config_simulates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = s6dyn(&["--config", &config("ldl_mixed.json"), "--out-dir", out, "simulate"]);
    assert!(o.status.success());
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["scenario"]["conjectural"], true);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for r in &runs {
        let o = s6dyn(&["--config", &config("random.json"), "--out-dir", r.to_str().unwrap(), "simulate"]);
        assert!(o.status.success());
    }
    for name in ["trajectory.csv", "report.json"] {
        assert_eq!(std::fs::read(runs[0].join(name)).unwrap(), std::fs::read(runs[1].join(name)).unwrap());
    }
}
