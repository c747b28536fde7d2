//! Integration tests for the `shortfall` binary: exit codes, file sets,
//! byte determinism across runs and thread counts, and golden regressions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Datelike, NaiveDate};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_shortfall")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

/// Weekday panel CSV with deterministic pseudo-random returns.
fn write_panel(path: &Path, rows: usize, skew_column: bool) {
    // xorshift-based deterministic values, no dependency on the crate
    let mut state = 0x9E3779B97F4A7C15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        // map to roughly N(0,1) via sum of uniforms
        let mut acc = 0.0;
        for _ in 0..12 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            acc += (state >> 11) as f64 / (1u64 << 53) as f64;
        }
        acc - 6.0
    };
    let mut text = String::from("date,MKT,S1,S2\n");
    let mut d: NaiveDate = "2018-01-01".parse().unwrap();
    let mut written = 0;
    while written < rows {
        if d.weekday().number_from_monday() <= 5 {
            let m = 0.01 * next();
            let s1 = if skew_column {
                // negatively skewed factor
                let z = next();
                0.0106 * (1.0 - (z - 0.5).exp())
            } else {
                0.01 * next()
            };
            let s2 = 0.01 * next();
            text.push_str(&format!("{d},{m},{s1},{s2}\n"));
            written += 1;
        }
        d += chrono::Duration::days(1);
    }
    std::fs::write(path, text).unwrap();
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

const BASE_CONFIG: &str = r#"
confidence_levels = [0.6, 0.95]
half_life_days = 21
rebalance_frequency = "monthly"
eigen_floor = 0.0
seed = 42
warmup_observations = 60
"#;

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    if !dir.exists() {
        return files;
    }
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            files.insert(
                entry.file_name().to_string_lossy().to_string(),
                std::fs::read(entry.path()).unwrap(),
            );
        }
    }
    files
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    panel: PathBuf,
    config: PathBuf,
    constraints: PathBuf,
}

fn fixture(config_body: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let panel = root.join("panel.csv");
    let config = root.join("config.toml");
    let constraints = root.join("constraints.toml");
    write_panel(&panel, 320, true);
    write_config(&config, config_body);
    std::fs::write(
        &constraints,
        "[style]\nindex_column = \"MKT\"\nstyle_bound = 2.0\n",
    )
    .unwrap();
    Fixture { _dir: dir, root, panel, config, constraints }
}

#[test]
fn optimize_success_writes_weights_json() {
    let f = fixture(BASE_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "optimize",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--constraints", f.constraints.to_str().unwrap(),
        "--date", "2019-01-15",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("optimize.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    let weights = json["results"]["xsf60"]["weights"].as_object().unwrap();
    assert_eq!(weights.len(), 3);
    assert!(weights.contains_key("MKT"));
    assert!(json["results"]["minvar"]["variance"].as_f64().unwrap() >= 0.0);
}

#[test]
fn optimize_infeasible_exits_3() {
    let f = fixture(BASE_CONFIG);
    let bad = f.root.join("bad.toml");
    std::fs::write(
        &bad,
        r#"
[[equality]]
coeffs = { MKT = 1.0 }
rhs = 1.0
[[equality]]
coeffs = { MKT = 1.0 }
rhs = 2.0
"#,
    )
    .unwrap();
    let out = f.root.join("out");
    let output = run(&[
        "optimize",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--constraints", bad.to_str().unwrap(),
        "--date", "2019-01-15",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 3);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("\"category\":\"infeasible\""), "stderr: {stderr}");
}

#[test]
fn optimize_missing_panel_exits_2() {
    let f = fixture(BASE_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "optimize",
        "--panel", f.root.join("nope.csv").to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--constraints", f.constraints.to_str().unwrap(),
        "--date", "2019-01-15",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 2);
}

const BACKTEST_CONFIG: &str = r#"
confidence_levels = [0.6]
half_life_days = 21
rebalance_frequency = "monthly"
eigen_floor = 0.0
seed = 42
warmup_observations = 60

[backtest]
start_date = "2018-08-01"
end_date = "2019-03-29"
index_column = "MKT"
"#;

#[test]
fn backtest_writes_expected_file_set() {
    let f = fixture(BACKTEST_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "backtest",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    for name in [
        "returns_index.csv",
        "returns_minvar.csv",
        "returns_xsf60.csv",
        "returns_active60.csv",
        "weights_minvar.csv",
        "weights_xsf60.csv",
        "attribution_xsf60.csv",
        "betas.csv",
        "summary.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["rebalance_count"].as_u64().unwrap() >= 6);
    let stats = summary["realized_stats"].as_array().unwrap();
    assert_eq!(stats.len(), 4); // index, minvar, xsf60, active60 over one regime
}

#[test]
fn backtest_start_before_coverage_exits_2() {
    let f = fixture(BACKTEST_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "backtest",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--start", "2018-01-05",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("insufficient_history"), "stderr: {stderr}");
}

const ESTERROR_CONFIG: &str = r#"
confidence_levels = [0.6, 0.9]
half_life_days = 21
rebalance_frequency = "monthly"
eigen_floor = 0.0
seed = 42
warmup_observations = 60

[esterror]
n_assets = 3
sample_lengths = [300, 500]
replications = 5
baseline_samples = 2000
"#;

#[test]
fn esterror_grid_schema_and_runtime() {
    let f = fixture(ESTERROR_CONFIG);
    let out = f.root.join("out");
    let started = std::time::Instant::now();
    let output = run(&[
        "esterror",
        "--config", f.config.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(started.elapsed().as_secs() < 10, "took {:?}", started.elapsed());

    for name in ["risk_error.csv", "weight_error.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_length,0.6,0.9");
        assert_eq!(lines.len(), 3); // header + one row per sample length
        assert!(lines[1].starts_with("300,"));
        assert!(lines[2].starts_with("500,"));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["boundary_angle_deg"].as_f64().unwrap() > 30.0);
    assert!(summary["random_baseline_deg"].as_f64().unwrap() > 0.0);
}

#[test]
fn esterror_invalid_confidence_exits_2() {
    let body = ESTERROR_CONFIG.replace("confidence_levels = [0.6, 0.9]", "confidence_levels = [1.5]");
    let f = fixture(&body);
    let out = f.root.join("out");
    let output = run(&[
        "esterror",
        "--config", f.config.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 2);
}

const NN_CONFIG: &str = r#"
confidence_levels = [0.6, 0.95]
half_life_days = 21
rebalance_frequency = "monthly"
eigen_floor = 0.0
seed = 42
warmup_observations = 40

[nn]
replications = 150
"#;

#[test]
fn nn_split_produces_report_rows() {
    let f = fixture(NN_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "nn",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--split", "2018-08-01",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let text = std::fs::read_to_string(out.join("nn_report.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 3 factors x 2 tails x 2 confidences + header
    assert_eq!(lines.len(), 1 + 3 * 2 * 2);
    assert!(lines[0].starts_with("name,tail,confidence"));
}

#[test]
fn nn_identical_periods_are_persistent() {
    let body = format!(
        "{}\n[[nn.periods]]\nlabel = \"a\"\nstart = \"2018-01-01\"\nend = \"2019-03-29\"\n\n[[nn.periods]]\nlabel = \"b\"\nstart = \"2018-01-01\"\nend = \"2019-03-29\"\n",
        NN_CONFIG
    );
    let f = fixture(&body);
    let out = f.root.join("out");
    let output = run(&[
        "nn",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let text = std::fs::read_to_string(out.join("nn_report.csv")).unwrap();
    for line in text.lines().skip(1) {
        assert!(line.ends_with(",true"), "non-persistent row: {line}");
    }
}

#[test]
fn nn_missing_panel_exits_2() {
    let f = fixture(NN_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "nn",
        "--panel", f.root.join("absent.csv").to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--split", "2018-08-01",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 2);
}

/// Criterion 9 at the binary level: all four subcommands are byte-identical
/// across repeated runs and across `--threads` settings.
#[test]
fn all_subcommands_byte_identical_across_runs_and_threads() {
    let combined_config = format!(
        "{}\n[backtest]\nstart_date = \"2018-08-01\"\nend_date = \"2019-03-29\"\nindex_column = \"MKT\"\n\n[esterror]\nn_assets = 3\nsample_lengths = [300]\nreplications = 4\nbaseline_samples = 1000\n\n[nn]\nreplications = 120\n",
        BASE_CONFIG
    );
    let f = fixture(&combined_config);
    let commands: Vec<Vec<String>> = vec![
        vec![
            "optimize".into(),
            "--panel".into(), f.panel.to_str().unwrap().into(),
            "--config".into(), f.config.to_str().unwrap().into(),
            "--constraints".into(), f.constraints.to_str().unwrap().into(),
            "--date".into(), "2019-01-15".into(),
        ],
        vec![
            "backtest".into(),
            "--panel".into(), f.panel.to_str().unwrap().into(),
            "--config".into(), f.config.to_str().unwrap().into(),
        ],
        vec![
            "esterror".into(),
            "--config".into(), f.config.to_str().unwrap().into(),
        ],
        vec![
            "nn".into(),
            "--panel".into(), f.panel.to_str().unwrap().into(),
            "--config".into(), f.config.to_str().unwrap().into(),
            "--split".into(), "2018-08-01".into(),
        ],
    ];
    for (i, base) in commands.iter().enumerate() {
        let mut snapshots = Vec::new();
        for (run_idx, threads) in ["1", "4", "1"].iter().enumerate() {
            let out = f.root.join(format!("out_{i}_{run_idx}"));
            let mut args: Vec<String> = base.clone();
            args.push("--out".into());
            args.push(out.to_str().unwrap().into());
            args.push("--threads".into());
            args.push((*threads).into());
            args.push("--seed".into());
            args.push("7".into());
            args.push("--quiet".into());
            let output = Command::new(binary()).args(&args).output().unwrap();
            assert_eq!(
                exit_code(&output),
                0,
                "command {i} run {run_idx}: {}",
                String::from_utf8_lossy(&output.stderr)
            );
            snapshots.push(snapshot(&out));
        }
        assert_eq!(
            snapshots[0], snapshots[1],
            "command {i}: threads 1 vs 4 differ"
        );
        assert_eq!(snapshots[0], snapshots[2], "command {i}: repeat run differs");
        assert!(!snapshots[0].is_empty(), "command {i} wrote nothing");
    }
}

/// Commands only write inside the designated output directory.
#[test]
fn writes_stay_inside_out_dir() {
    let f = fixture(BACKTEST_CONFIG);
    let before = snapshot(&f.root);
    let out = f.root.join("out");
    let output = run(&[
        "backtest",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0);
    let after = snapshot(&f.root);
    assert_eq!(before, after, "files outside --out changed");
}

// Golden regressions: fixed inputs and seed must reproduce the committed
// bytes exactly.
fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn assert_matches_golden(actual_path: &Path, golden_name: &str) {
    let actual = std::fs::read(actual_path).unwrap();
    let golden_path = golden_dir().join(golden_name);
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&golden_path, &actual).unwrap();
        return;
    }
    let golden = std::fs::read(&golden_path)
        .unwrap_or_else(|_| panic!("golden file {golden_name} missing; run with UPDATE_GOLDEN=1"));
    assert_eq!(
        actual,
        golden,
        "{} differs from golden {golden_name}",
        actual_path.display()
    );
}

#[test]
fn golden_optimize_json() {
    let f = fixture(BASE_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "optimize",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--constraints", f.constraints.to_str().unwrap(),
        "--date", "2019-01-15",
        "--seed", "7",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_matches_golden(&out.join("optimize.json"), "optimize.json");
}

#[test]
fn golden_backtest_summary() {
    let f = fixture(BACKTEST_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "backtest",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--seed", "7",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_matches_golden(&out.join("summary.json"), "backtest_summary.json");
    assert_matches_golden(&out.join("weights_xsf60.csv"), "backtest_weights_xsf60.csv");
}

#[test]
fn golden_nn_report() {
    let f = fixture(NN_CONFIG);
    let out = f.root.join("out");
    let output = run(&[
        "nn",
        "--panel", f.panel.to_str().unwrap(),
        "--config", f.config.to_str().unwrap(),
        "--split", "2018-08-01",
        "--seed", "7",
        "--out", out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_matches_golden(&out.join("nn_report.csv"), "nn_report.csv");
}
