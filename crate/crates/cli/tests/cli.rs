use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn wzr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wzr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &TempDir, name: &str, value: &Value) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn benchmark() -> Value {
    json!({
        "domain": {"name": "interval", "a": -1.0, "b": 1.0},
        "coefficients": {
            "sigma": {"name": "trig", "a": [[0.5]], "b": [[0.2]], "c": [[[1.0]]]},
            "drift": {"name": "affine", "matrix": [[-0.3]], "offset": [0.0]}
        },
        "x0": [0.0],
        "horizon": 1.0,
        "levels": [4, 5, 6, 7],
        "paths": 300,
        "seed": 17
    })
}

fn frozen() -> Value {
    let mut c = benchmark();
    c["coefficients"] = json!({
        "sigma": {"name": "constant", "value": [[0.0]]},
        "drift": {"name": "constant", "value": [0.0]}
    });
    c["paths"] = json!(20);
    c
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn certify_ball_and_annulus() {
    let out = wzr(&["certify", "--domain", "ball", "--radius", "1"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["d1"]["c0_hat"].as_f64().unwrap(), 0.0);
    assert!((v["d2"]["alpha_hat"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let out = wzr(&[
        "certify", "--domain", "annulus", "--r1", "0.5", "--r2", "1.5",
    ]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert!((v["d1"]["c0_hat"].as_f64().unwrap() - 1.0).abs() < 0.02);
    assert!((v["d2"]["alpha_hat"].as_f64().unwrap() - 1.0).abs() < 0.02);
}

#[test]
fn certify_rejects_a_bad_cover() {
    let dir = TempDir::new().unwrap();
    let cert = write_config(
        &dir,
        "cert.json",
        &json!({"centers": [[1.0, 0.0]], "radius": 0.5, "directions": [[-1.0, 0.0]], "lambda": 0.45}),
    );
    let out = wzr(&[
        "certify",
        "--domain",
        "ball",
        "--radius",
        "1",
        "--cert",
        p(&cert),
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["d3"]["pass"], json!(false));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = TempDir::new().unwrap();
    let mut c = benchmark();
    c.as_object_mut().unwrap().remove("horizon");
    let path = write_config(&dir, "bad.json", &c);
    let out = wzr(&["converge", "--config", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));

    let mut c = benchmark();
    c["x0"] = json!([4.0]);
    let path = write_config(&dir, "outside.json", &c);
    assert_eq!(code(&wzr(&["converge", "--config", p(&path)])), 2);
    assert_eq!(code(&wzr(&["converge"])), 2);
}

#[test]
fn converge_meets_thresholds_and_leaves_config_alone() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, "bench.json", &benchmark());
    let before = std::fs::read(&path).unwrap();
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    let run = wzr(&[
        "converge",
        "--config",
        p(&path),
        "--workers",
        "2",
        "--out",
        p(&out_a),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(
        code(&wzr(&[
            "converge",
            "--config",
            p(&path),
            "--workers",
            "2",
            "--out",
            p(&out_b)
        ])),
        0
    );
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap()
    );
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let v: Value = serde_json::from_slice(&std::fs::read(&out_a).unwrap()).unwrap();
    assert_eq!(v["thresholds_met"], json!(true));
    assert!(v["report"]["terminal"][0]["slope"].as_f64().unwrap() >= 0.4);

    let csv = wzr(&[
        "converge",
        "--config",
        p(&path),
        "--format",
        "csv",
        "--paths",
        "50",
    ]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("statistic,p,n,error,stderr\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn converge_threshold_miss_and_degenerate() {
    let dir = TempDir::new().unwrap();
    let mut c = benchmark();
    c["paths"] = json!(50);
    c["thresholds"] = json!({"rate_slope": 5.0, "lyapunov_slope": 0.0});
    let path = write_config(&dir, "strict.json", &c);
    assert_eq!(code(&wzr(&["converge", "--config", p(&path)])), 1);

    let path = write_config(&dir, "frozen.json", &frozen());
    let out = wzr(&["converge", "--config", p(&path)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["degenerate"], json!(true));

    let mut c = benchmark();
    c["levels"] = json!([4]);
    let path = write_config(&dir, "single.json", &c);
    let out = wzr(&["converge", "--config", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn simulate_reflected_drift() {
    let dir = TempDir::new().unwrap();
    let c = json!({
        "domain": {"name": "interval", "a": -1.0, "b": 1.0},
        "coefficients": {
            "sigma": {"name": "constant", "value": [[0.0]]},
            "drift": {"name": "constant", "value": [1.0]}
        },
        "x0": [0.0], "horizon": 2.0, "levels": [4], "format": "csv"
    });
    let path = write_config(&dir, "drift.json", &c);
    let out = wzr(&["simulate", "--config", p(&path)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,X,Xn,L,Ln,|L|,|Ln|,f_n");
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(last[0], 2.0);
    assert!((last[5] - 1.0).abs() < 1e-12 && (last[6] - 1.0).abs() < 1e-12);

    let mut two = c.clone();
    two["levels"] = json!([3, 4]);
    let path = write_config(&dir, "two.json", &two);
    assert_eq!(code(&wzr(&["simulate", "--config", p(&path)])), 2);
}

#[test]
fn simulate_is_reproducible_and_nonnegative() {
    let dir = TempDir::new().unwrap();
    let mut c = benchmark();
    c["coefficients"]["sigma"] = json!({"name": "constant", "value": [[0.3]]});
    c["levels"] = json!([5]);
    c["format"] = json!("csv");
    let path = write_config(&dir, "sim.json", &c);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(
        code(&wzr(&[
            "simulate",
            "--config",
            p(&path),
            "--seed",
            "4",
            "--out",
            p(&a)
        ])),
        0
    );
    assert_eq!(
        code(&wzr(&[
            "simulate",
            "--config",
            p(&path),
            "--seed",
            "4",
            "--out",
            p(&b)
        ])),
        0
    );
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    for line in text.lines().skip(1) {
        let f: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(f >= 0.0);
    }
}

#[test]
fn holder_commands() {
    let dir = TempDir::new().unwrap();
    let mut c = benchmark();
    c["paths"] = json!(500);
    c["holder"] = json!({"p_list": [2]});
    let path = write_config(&dir, "holder.json", &c);
    let out = wzr(&["holder", "--config", p(&path)]);
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["rows"][0]["slope"].as_f64().unwrap() >= 0.8);

    let mut f = frozen();
    f["holder"] = json!({"p_list": [2, 4]});
    let path = write_config(&dir, "frozen.json", &f);
    let out = wzr(&["holder", "--config", p(&path)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["rows"][0]["degenerate"], json!(true));

    c["holder"] = json!({"p_list": [3]});
    let path = write_config(&dir, "odd.json", &c);
    assert_eq!(code(&wzr(&["holder", "--config", p(&path)])), 2);
}
