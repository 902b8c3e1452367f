use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn consolidate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_consolidate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_long_scenario(dir: &Path) -> std::path::PathBuf {
    let arrivals: Vec<String> = (0..20).map(|_| r#"["1KB", "4KB"]"#.to_owned()).collect();
    let text = format!(
        r#"{{ "servers": [{{ "id": "a", "preset": "M1" }}], "sequences": {{ "long": [{}] }} }}"#,
        arrivals.join(", ")
    );
    let file = dir.join("long.json");
    fs::write(&file, text).unwrap();
    file
}

#[test]
fn run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.json");
    fs::write(&config, include_str!("../../core/data/four_servers.json")).unwrap();
    let report = dir.path().join("report.json");
    let out = consolidate(&[
        "run",
        "--config",
        path(&config),
        "--sequence",
        "1",
        "--alpha",
        "1.3",
        "--out",
        path(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["trace"].as_array().unwrap().len(), 5);
    assert_eq!(json["alpha"], 1.3);
}

#[test]
fn stdout_carries_only_data() {
    let out = consolidate(&["sweep", "--out", "-"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.starts_with("sequence,alpha,"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("snapped"));
}

#[test]
fn oversized_comparison_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_long_scenario(dir.path());
    let out = consolidate(&[
        "compare",
        "--config",
        path(&config),
        "--sequence",
        "long",
        "--exhaustive-limit",
        "12",
        "--out",
        "-",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("20 arrivals"));
}

#[test]
fn generated_profiles_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = consolidate(&[
            "generate-profile",
            "--server",
            "M1",
            "--seed",
            "7",
            "--out",
            path(p),
        ]);
        assert!(out.status.success());
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(bytes.iter().filter(|&&c| c == b'\n').count(), 52_901);
    let out = consolidate(&["validate", "--table", path(&a)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "servers": [{ "id": "a", "preset": "M9" }] }"#).unwrap();
    assert_eq!(
        consolidate(&["validate", "--config", path(&bad)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        consolidate(&["run", "--sequence", "9", "--out", "-"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(consolidate(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_fails_before_work() {
    let out = consolidate(&[
        "run",
        "--sequence",
        "1",
        "--out",
        "/nonexistent/dir/report.json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("snapped"));
}
