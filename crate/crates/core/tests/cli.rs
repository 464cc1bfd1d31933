use std::path::{Path, PathBuf};
use std::process::Command;

use overflowlab::cli;

fn networks_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("networks")
}

fn net(name: &str) -> String {
    networks_dir().join(name).to_str().unwrap().to_string()
}

fn exec(args: &[&str]) -> cli::Execution {
    let mut full = vec!["overflowlab"];
    full.extend_from_slice(args);
    cli::execute(full).unwrap()
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_overflowlab")).args(args).output().unwrap()
}

#[test]
fn validate_prints_intensity_and_bottlenecks() {
    let out = exec(&["validate", "--network", &net("mm1.json")]).output;
    assert!(out.contains("0.428571"), "{out}");
    assert!(out.contains("beta = 1"), "{out}");
    let csv = exec(&["validate", "--network", &net("tandem_sym.json"), "--format", "csv"]).output;
    assert!(csv.lines().next().unwrap().contains("rho"));
}

#[test]
fn exact_mm1_n2() {
    let out = exec(&["exact", "--network", &net("mm1.json"), "--n", "2", "--target", "1"]).output;
    assert_eq!(out.trim(), "0.090000000");
}

#[test]
fn exact_csv_has_header_then_row() {
    let out = exec(&["exact", "--network", &net("tandem_asym.json"), "--n", "6", "--format", "csv"]).output;
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("n,"));
}

#[test]
fn split_is_reproducible_and_near_exact() {
    let args = [
        "split", "--network", &net("tandem_sym.json"), "--n", "10", "--target", "1,1", "--r", "2", "--m", "10000",
        "--seed", "42", "--format", "csv",
    ];
    let a = exec(&args).output;
    let b = exec(&args).output;
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()].parse::<f64>().unwrap();
    let exact = exec(&["exact", "--network", &net("tandem_sym.json"), "--n", "10", "--format", "csv"]).output;
    let p: f64 = exact.lines().nth(1).unwrap().rsplit(',').nth(1).unwrap().parse().unwrap();
    assert!((col("mean") - p).abs() <= 4.0 * col("std_error"));
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let status = binary(&[
        "mc", "--network", &net("mm1.json"), "--n", "3", "--m", "2000", "--seed", "3", "--format", "csv", "--output",
        path.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let written = std::fs::read_to_string(&path).unwrap();
    assert!(written.starts_with("n,"));
}

#[test]
fn check_passes_on_examples() {
    for name in ["mm1.json", "tandem_sym.json", "tandem_asym.json", "feedback3.json"] {
        let out = binary(&["check", "--network", &net(name)]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stdout));
    }
}

#[test]
fn seed_is_mandatory() {
    let out = binary(&["split", "--network", &net("mm1.json"), "--n", "5", "--m", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_file_names_the_path() {
    let out = binary(&["validate", "--network", "/nonexistent/net.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/net.json"));
}

#[test]
fn unstable_network_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"lambda":[0.6],"mu":[0.4],"routing":[[0.0]]}"#).unwrap();
    let out = binary(&["validate", "--network", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn bad_target_is_a_usage_error() {
    let out = binary(&["exact", "--network", &net("tandem_sym.json"), "--n", "4", "--target", "1,2"]);
    assert_ne!(out.status.code(), Some(0));
    let out = binary(&["exact", "--network", &net("tandem_sym.json"), "--n", "4", "--target", "1"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn max_states_env_limits_exact_solver() {
    let out = Command::new(env!("CARGO_BIN_EXE_overflowlab"))
        .args(["exact", "--network", &net("tandem_sym.json"), "--n", "40"])
        .env(cli::MAX_STATES_ENV, "10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn scaling_csv_has_trailer() {
    let out = exec(&[
        "scaling", "--network", &net("mm1.json"), "--n-list", "4,6,8,10", "--m", "500", "--seed", "9", "--format",
        "csv", "--threads", "2",
    ])
    .output;
    assert!(out.starts_with("n,estimate,exact,cv2,mean_Nn,mean_work\n"));
    assert!(out.contains("\nquantity,slope,intercept,r_squared,theory,lower,upper,pass\n"));
    assert_eq!(out.lines().count(), 1 + 4 + 1 + 4);
}
