//! End-to-end tests of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_assimilate");

const CONFIG: &str = r#"
[model]
name = "linear"
dt = 0.1
A = [[0.0, 1.0], [-1.0, 0.0]]
Q = [[0.01, 0.0], [0.0, 0.01]]
initial_mean = [1.0, 0.0]
initial_cov = [[0.5, 0.0], [0.0, 0.5]]

[observation]
H = [[1.0, 0.0]]
R = [[0.25]]
interval = 2

[filter]
name = "esrf"
M = 25
seed = 9

[run]
n_steps = 20
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_is_reproducible_and_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["run", "--config", &cfg, "--output", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "step,time,truth_1,truth_2,mean_1,mean_2,spread,rmse,ess,resampled"
    );
    assert_eq!(text.lines().count(), 21);

    let other = run(&["run", "--config", &cfg, "--seed", "10"]);
    assert!(other.status.success());
    assert_ne!(String::from_utf8(other.stdout).unwrap(), text);
}

#[test]
fn oracle_flag_adds_reference_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &CONFIG.replace("Q = [[0.01, 0.0], [0.0, 0.01]]", "Q = [[0.0, 0.0], [0.0, 0.0]]"));
    let o = run(&["run", "--config", &cfg, "--oracle"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().next().unwrap().ends_with("oracle_mean_1,oracle_mean_2,oracle_gap"));
    for line in text.lines().skip(1) {
        let gap: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(gap <= 1e-8, "{line}");
    }
}

#[test]
fn zero_steps_give_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &CONFIG.replace("n_steps = 20", "n_steps = 0"));
    let o = run(&["run", "--config", &cfg]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);
}

#[test]
fn generate_writes_twin_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", CONFIG);
    let out = dir.path().join("twin");
    let o = run(&["generate", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("twin.csv")).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn config_errors_exit_with_two_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &CONFIG.replace("M = 25", "M = \"many\""));
    let o = run(&["run", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line"), "{err}");

    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // An explicit step far beyond the stability limit overflows the state.
    let text = CONFIG
        .replace("A = [[0.0, 1.0], [-1.0, 0.0]]", "A = [[-300.0, 0.0], [0.0, -300.0]]")
        .replace("n_steps = 20", "n_steps = 400");
    let cfg = write_config(dir.path(), "exp.toml", &text);
    let o = run(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sample_and_transport_subcommands() {
    let o = run(&["sample", "--target", "gaussian", "-n", "500", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("acceptance rate"));
    assert_eq!(run(&["sample", "--target", "nope"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let src = write_config(dir.path(), "src.txt", "0.0,0.5\n1.0,0.5\n");
    let dst = write_config(dir.path(), "dst.txt", "2.0,0.5\n3.0,0.5\n");
    let o = run(&["transport", "--source", &src, "--target", &dst]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let w2: f64 = String::from_utf8_lossy(&o.stderr)
        .trim()
        .strip_prefix("W2 ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((w2 - 2.0).abs() < 1e-12);
    let bad = write_config(dir.path(), "bad.txt", "0.0,abc\n");
    assert_eq!(run(&["transport", "--source", &bad, "--target", &dst]).status.code(), Some(2));
}
