use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_incred");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(format!("{name}.json"))
}

fn run(args: &[&str], out: &Path) -> Output {
    run_env(args, out, &[])
}

fn run_env(args: &[&str], out: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--out").arg(out).arg("-q");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(args: &[&str], out: &Path) -> i32 {
    let o = run(args, out);
    o.status
        .code()
        .unwrap_or_else(|| panic!("killed: {args:?}"))
}

fn input(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A copy of a fixture with one top-level key replaced.
fn variant(dir: &Path, name: &str, key: &str, value: Value) -> String {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(fixture(name)).unwrap()).unwrap();
    v[key] = value;
    let path = dir.join(format!("{name}-{key}.json"));
    fs::write(&path, v.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

struct Inputs {
    _dir: tempfile::TempDir,
    broken: String,
    missing: String,
}

fn inputs() -> Inputs {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"n\": 2, \"F\": [").unwrap();
    let missing = dir.path().join("absent.json");
    Inputs {
        broken: broken.to_string_lossy().into_owned(),
        missing: missing.to_string_lossy().into_owned(),
        _dir: dir,
    }
}

#[test]
fn reduce_exit_codes_and_table() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(&["reduce", "--input", &input("example1")], out.path()),
        0
    );
    let csv = fs::read_to_string(out.path().join("reduction.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    assert!(out.path().join("reduction.txt").exists());
    assert_eq!(code(&["reduce", "--input", &i.broken], out.path()), 2);
    assert_eq!(code(&["reduce", "--input", &i.missing], out.path()), 3);
    assert_eq!(
        code(
            &["reduce", "--input", &input("example1"), "--x0", "1,2"],
            out.path()
        ),
        3
    );
}

#[test]
fn reduce_example3_four_cases() {
    let out = tempfile::tempdir().unwrap();
    for (x0, want) in [
        ("1,0", "F~ = {0} × [-1.5, -0.5]"),
        ("-1,0", "F~ = {0} × [0.5, 1.5]"),
        ("1,1", "F~ = ∅"),
        ("0.5,0.5", "F~ = {0.5} × {-1}"),
    ] {
        let o = Command::new(BIN)
            .args([
                "reduce",
                "--input",
                &input("example3"),
                &format!("--x0={x0}"),
                "--out",
            ])
            .arg(out.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        let text = fs::read_to_string(out.path().join("reduction.txt")).unwrap();
        assert!(text.contains(want), "{x0}: {text}");
    }
}

#[test]
fn reduce_smooth_only_keeps_f() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(
        code(
            &["reduce", "--input", &input("smooth_only"), "--grid", "5"],
            out.path()
        ),
        0
    );
    let mut rdr = csv::Reader::from_path(out.path().join("reduction.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let f_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("F_"))
        .map(|(k, _)| k)
        .collect();
    let r_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("Fred_"))
        .map(|(k, _)| k)
        .collect();
    assert_eq!(f_cols.len(), r_cols.len(), "{header:?}");
    assert!(!f_cols.is_empty());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for (a, b) in f_cols.iter().zip(&r_cols) {
            assert_eq!(rec[*a], rec[*b], "{rec:?}");
        }
    }
}

#[test]
fn deriv_exit_codes_and_values() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(
            &["deriv", "--input", &input("example2"), "--x0", "0.5,0.5"],
            out.path()
        ),
        0
    );
    let mut rdr = csv::Reader::from_path(out.path().join("derivative.csv")).unwrap();
    let rec = rdr.records().next().unwrap().unwrap();
    assert_eq!(&rec[3], "-0.5");
    assert_eq!(
        code(
            &["deriv", "--input", &input("example2"), "--x0", "1,0.5"],
            out.path()
        ),
        0
    );
    let text = fs::read_to_string(out.path().join("derivative.csv")).unwrap();
    assert!(text.contains("-inf"), "{text}");
    assert_eq!(code(&["deriv", "--input", &i.broken], out.path()), 2);
    assert_eq!(code(&["deriv", "--input", &i.missing], out.path()), 3);
}

#[test]
fn certify_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(&["certify", "--input", &input("example2")], out.path()),
        0
    );
    assert_eq!(
        json(&out.path().join("certificate.json"))["verdict"],
        "CERTIFIED"
    );
    assert_eq!(
        code(&["certify", "--input", &input("trivial_zero")], out.path()),
        0
    );
    assert_eq!(
        code(
            &[
                "certify",
                "--input",
                &input("example2_baseline"),
                "--baseline"
            ],
            out.path()
        ),
        1
    );
    let cert = json(&out.path().join("certificate.json"));
    assert_eq!(cert["verdict"], "VIOLATED");
    let points: Vec<&Value> = cert["witnesses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| &w["point"]["x"])
        .collect();
    assert!(
        points.iter().any(|p| **p == serde_json::json!([1.0, 1.0])),
        "{points:?}"
    );
    assert_eq!(code(&["certify", "--input", &i.broken], out.path()), 2);
    assert_eq!(
        code(
            &["certify", "--input", &input("example1"), "--grid", "1"],
            out.path()
        ),
        3
    );
}

#[test]
fn invariance_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(&["invariance", "--input", &input("example3")], out.path()),
        0
    );
    let report = json(&out.path().join("invariance.json"));
    assert_eq!(report["passed"], true);
    let equilibria = variant(
        i._dir.path(),
        "trivial_zero",
        "invariance",
        serde_json::json!({"zero_tol": 1e-9, "candidates": [[0.5, 0.0]]}),
    );
    assert_eq!(code(&["invariance", "--input", &equilibria], out.path()), 1);
    assert_eq!(code(&["invariance", "--input", &i.broken], out.path()), 2);
    assert_eq!(
        code(&["invariance", "--input", &input("example4")], out.path()),
        3
    );
}

#[test]
fn matrosov_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(&["matrosov", "--input", &input("example6")], out.path()),
        0
    );
    let report = json(&out.path().join("matrosov.json"));
    assert_eq!(report["chain"]["verdict"], "CERTIFIED");
    let consts = &report["constants"]["constants"];
    assert_eq!(consts["k"], serde_json::json!([2.0]));
    assert!(consts["zeta"].as_f64().unwrap() >= 0.009);
    assert_eq!(
        code(
            &["matrosov", "--input", &input("matrosov_trivial")],
            out.path()
        ),
        0
    );
    assert_eq!(
        code(
            &["matrosov", "--input", &input("matrosov_broken")],
            out.path()
        ),
        1
    );
    let report = json(&out.path().join("matrosov.json"));
    assert!(!report["chain"]["witnesses"].as_array().unwrap().is_empty());
    assert_eq!(
        code(
            &["matrosov", "--input", &input("matrosov_adversarial")],
            out.path()
        ),
        1
    );
    assert_eq!(code(&["matrosov", "--input", &i.broken], out.path()), 2);
    assert_eq!(
        code(&["matrosov", "--input", &input("example2")], out.path()),
        3
    );
}

#[test]
fn simulate_exit_codes_and_reports() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(&["simulate", "--input", &input("example2")], out.path()),
        0
    );
    let report = json(&out.path().join("simulation.json"));
    let norm = report["final_norm"].as_f64().unwrap();
    assert!((norm - 4.77e-3).abs() <= 5e-4, "{norm}");
    assert_eq!(report["membership"]["fraction"].as_f64().unwrap(), 0.0);
    let csv = fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5002);

    assert_eq!(
        code(&["simulate", "--input", &input("example5")], out.path()),
        0
    );
    let report = json(&out.path().join("simulation.json"));
    assert!(report["tail"]["tail_max"].as_f64().unwrap() < 1e-3);

    assert_eq!(
        code(&["simulate", "--input", &input("trivial_zero")], out.path()),
        0
    );
    let mut rdr = csv::Reader::from_path(out.path().join("trajectory.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!((&rec[1], &rec[2]), ("0.3", "0"));
    }

    assert_eq!(
        code(
            &["simulate", "--input", &input("example5"), "--T", "1"],
            out.path()
        ),
        1
    );
    assert_eq!(code(&["simulate", "--input", &i.broken], out.path()), 2);
    assert_eq!(
        code(
            &[
                "simulate",
                "--input",
                &input("example2"),
                "--strategy",
                "heun"
            ],
            out.path()
        ),
        3
    );
}

#[test]
fn validate_gradient_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let i = inputs();
    assert_eq!(
        code(
            &["validate-gradient", "--input", &input("example1")],
            out.path()
        ),
        0
    );
    assert_eq!(
        code(
            &[
                "validate-gradient",
                "--input",
                &input("example6"),
                "--x0",
                "1,1"
            ],
            out.path()
        ),
        0
    );
    let wrong = variant(
        i._dir.path(),
        "example1",
        "V",
        serde_json::json!({"value": "0.5 * x1 * x1", "gradient": [{"guard": "otherwise", "value": ["{2 * x1}", "{0}"]}]}),
    );
    assert_eq!(
        code(&["validate-gradient", "--input", &wrong], out.path()),
        1
    );
    assert_eq!(
        code(&["validate-gradient", "--input", &i.broken], out.path()),
        2
    );
    assert_eq!(
        code(
            &[
                "validate-gradient",
                "--input",
                &input("example1"),
                "--radius",
                "0"
            ],
            out.path()
        ),
        3
    );
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let cases: [(&str, &str, &[&str], &str); 4] = [
        (
            "certify",
            "example2_baseline",
            &["--baseline"],
            "certificate.json",
        ),
        ("matrosov", "example6", &[], "matrosov.json"),
        (
            "simulate",
            "example3",
            &["--strategy", "random-extreme", "--seed", "11"],
            "trajectory.csv",
        ),
        ("deriv", "example2", &["--grid", "21"], "derivative.csv"),
    ];
    for (cmd, name, extra, file) in cases {
        let mut seen = Vec::new();
        for threads in ["1", "3", "8"] {
            let out = tempfile::tempdir().unwrap();
            let mut args = vec![cmd, "--input"];
            let path = input(name);
            args.push(&path);
            args.extend_from_slice(extra);
            run_env(&args, out.path(), &[("INCRED_THREADS", threads)]);
            seen.push(fs::read(out.path().join(file)).unwrap());
        }
        assert!(seen.windows(2).all(|w| w[0] == w[1]), "{cmd} {name}");
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(
        code(
            &["certify", "--input", &input("example2"), "--frobnicate"],
            out.path()
        ),
        2
    );
}
