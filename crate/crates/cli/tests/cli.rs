use std::path::Path;
use std::process::{Command, Output};

fn lifecycle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lifecycle"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn small_market(dir: &Path) {
    std::fs::write(
        dir.join("s.toml"),
        "seed = 3\nn_products = 4\nn_pairs = 2\nreviews_per_product = 3000\n",
    )
    .unwrap();
    let out = lifecycle(dir, &["synth", "--scenario", "s.toml", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const DATA: [&str; 6] = [
    "--input",
    "data/reviews.jsonl",
    "--prices",
    "data/prices.csv",
    "--pairs",
    "data/pairs.csv",
];

fn run_on_data(dir: &Path, cmd: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend(DATA);
    args.extend(["--out", out]);
    args.extend(extra);
    lifecycle(dir, &args)
}

#[test]
fn synth_then_forecast_reports_every_model() {
    let tmp = tempfile::tempdir().unwrap();
    small_market(tmp.path());
    for f in ["reviews.jsonl", "prices.csv", "pairs.csv", "truth.json", "scenario.toml"] {
        assert!(tmp.path().join("data").join(f).exists(), "{f}");
    }
    let out = run_on_data(tmp.path(), "forecast", "r", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(tmp.path().join("r/forecast_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("# lifecycle "));
    assert_eq!(lines.next(), Some("model,units,mean_mae"));
    let models: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    for m in ["LVC-Sale", "ARIMA", "Fourier", "Power", "Gaussian"] {
        assert!(models.contains(&m), "{m} missing from {models:?}");
    }
}

#[test]
fn compete_writes_events_for_each_pair() {
    let tmp = tempfile::tempdir().unwrap();
    small_market(tmp.path());
    let out = run_on_data(tmp.path(), "compete", "r", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("r/events.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["meta"]["tool"], "lifecycle");
    assert_eq!(v["data"].as_array().unwrap().len(), 2);
    let rows = std::fs::read_to_string(tmp.path().join("r/compete.csv")).unwrap();
    assert!(rows.contains(",LVC-COMP,") && rows.contains(",ARIMA,"));
}

#[test]
fn missing_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lifecycle(tmp.path(), &["forecast", "--input", "absent.jsonl", "--out", "r"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn missing_flag_and_bad_values_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(lifecycle(tmp.path(), &["forecast"]).status.code(), Some(3));
    assert_eq!(lifecycle(tmp.path(), &["synth", "--preset", "nope"]).status.code(), Some(3));
    small_market(tmp.path());
    let out = run_on_data(tmp.path(), "forecast", "r", &["--window", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(lifecycle(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    small_market(tmp.path());
    let out = lifecycle(tmp.path(), &["synth", "--scenario", "s.toml", "--out", "data"]);
    assert_eq!(out.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    let out = lifecycle(tmp.path(), &["synth", "--scenario", "s.toml", "--out", "data", "--force"]);
    assert!(out.status.success());
}

#[test]
fn reports_do_not_depend_on_the_output_path() {
    let tmp = tempfile::tempdir().unwrap();
    small_market(tmp.path());
    for out in ["a", "nested/b"] {
        let o = run_on_data(tmp.path(), "compete", out, &[]);
        assert!(o.status.success());
    }
    for f in ["compete.csv", "compete_summary.csv", "events.json"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("nested/b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn seed_changes_the_stamp_and_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    for (seed, out) in [("1", "a"), ("2", "b")] {
        let o = lifecycle(tmp.path(), &["synth", "--preset", "death", "--seed", seed, "--out", out]);
        assert!(o.status.success());
    }
    let a = std::fs::read_to_string(tmp.path().join("a/prices.csv")).unwrap();
    let b = std::fs::read_to_string(tmp.path().join("b/prices.csv")).unwrap();
    assert!(a.starts_with("# lifecycle ") && a.contains("seed=1"));
    assert!(b.contains("seed=2"));
    assert_ne!(
        std::fs::read(tmp.path().join("a/reviews.jsonl")).unwrap(),
        std::fs::read(tmp.path().join("b/reviews.jsonl")).unwrap()
    );
}

#[test]
fn analysis_commands_run_on_a_synthetic_market() {
    let tmp = tempfile::tempdir().unwrap();
    small_market(tmp.path());
    let cases: [(&str, &[&str], &str); 5] = [
        ("ingest", &[], "ingest_summary.csv"),
        ("series", &[], "series"),
        ("trust", &[], "trust_bins.csv"),
        ("cluster", &["--k", "2"], "cluster_assignments.csv"),
        ("factors", &[], "factors.csv"),
    ];
    for (cmd, extra, artifact) in cases {
        let out = format!("r_{cmd}");
        let o = run_on_data(tmp.path(), cmd, &out, extra);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(tmp.path().join(&out).join(artifact).exists(), "{cmd}");
    }
    let o = run_on_data(tmp.path(), "ccf", "r_ccf", &["--product", "P0001", "--max-lag", "3"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(tmp.path().join("r_ccf/ccf.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 + 7);
}
