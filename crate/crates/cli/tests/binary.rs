use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_spiral-euler"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .env("SPIRAL_EULER_THREADS", "2")
        .output()
        .unwrap()
}

const SMALL: &str = "mu = 1\nN = 4000\nomega.amplitude = 0.01\nverify.samples = 50\n";

#[test]
fn certify_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let ok = run(d.path(), "mu = 1\nN = 4000\n", &["certify"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("passes = true"));
    let bad = run(d.path(), "mu = 1\nN = 100\n", &["certify"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("certificate fails"));
}

#[test]
fn config_errors_exit_with_one() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), "mu = 1\nN = 4000\nbogus = 1\n", &["solve"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let out = run(d.path(), "mu = 0.5\nN = 4000\n", &["certify"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'mu'"));
}

#[test]
fn render_needs_a_saved_field() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), SMALL, &["render"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `solve` first"));
}

#[test]
fn certificate_json_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let read = || fs::read(d.path().join("out/certificate.json")).unwrap();
    assert!(run(d.path(), "mu = 1\nN = 4000\n", &["certify"]).status.success());
    let a = read();
    assert!(run(d.path(), "mu = 1\nN = 4000\n", &["certify"]).status.success());
    assert_eq!(a, read());
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let echo = fs::read_to_string(d.path().join("out/config.echo")).unwrap();
    let hash = doc["config_hash"].as_str().unwrap();
    assert!(echo.starts_with(&format!("# config_hash = {hash}")));
    assert_eq!(doc["kind"], "certificate");
}

#[test]
fn solve_then_verify_and_render() {
    let d = tempfile::tempdir().unwrap();
    let s = run(d.path(), SMALL, &["solve"]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let first = fs::read(d.path().join("out/solution.json")).unwrap();
    assert!(run(d.path(), SMALL, &["solve"]).status.success());
    assert_eq!(first, fs::read(d.path().join("out/solution.json")).unwrap());

    let v = run(d.path(), SMALL, &["verify"]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stdout));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(rep["data"]["pass"], true);

    let r = run(d.path(), SMALL, &["render"]);
    assert!(r.status.success());
    let svg = fs::read_to_string(d.path().join("out/spiral.svg")).unwrap();
    assert!(svg.contains("config_hash"));
}

#[test]
fn format_flag_limits_artifacts() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(d.path(), "mu = 1\nN = 4000\n", &["certify", "--format", "csv"]).status.success());
    assert!(!d.path().join("out/certificate.json").exists());
    assert!(d.path().join("out/certificate.txt").exists());
}
