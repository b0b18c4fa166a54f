use std::f64::consts::SQRT_2;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fock-chsh"));
    c.env_remove("FOCK_CHSH_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|x| match x {
                    "true" => 1.0,
                    "false" => 0.0,
                    "" => f64::NAN,
                    v => v.parse().unwrap(),
                })
                .collect()
        })
        .collect()
}

#[test]
fn curve_landmarks() {
    let out = run(&["curve", "--scheme", "1", "--xi-minus-eta", "3pi/4", "--delta-phi", "pi/2,1.5pi"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# fock-chsh curve v1\ndelta_phi,c,S_analytic\n"));
    let rows = data_rows(&text);
    assert!((rows[0][2] - 2.0 * SQRT_2).abs() < 1e-12);
    assert!((rows[0][1] + 1.0).abs() < 1e-12);
    assert!(rows[1][2].abs() < 1e-12);
}

#[test]
fn curve_maximum_on_dense_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = run(&["curve", "--points", "1000", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = data_rows(&fs::read_to_string(&path).unwrap());
    assert_eq!(rows.len(), 1000);
    let best = rows.iter().max_by(|a, b| a[2].partial_cmp(&b[2]).unwrap()).unwrap();
    let spacing = 2.0 * std::f64::consts::PI / 1000.0;
    assert!((best[0] - std::f64::consts::FRAC_PI_2).abs() <= spacing);
}

#[test]
fn curve_json_and_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("FOCK_CHSH_OUT_DIR", dir.path())
        .args(["curve", "--points", "8", "--format", "json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 8);
    assert!(v[0]["S_analytic"].is_number());
}

fn estimates(path: &Path) -> Vec<Vec<f64>> {
    data_rows(&fs::read_to_string(path).unwrap())
}

#[test]
fn simulate_scheme2_and_rerun_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est.csv");
    let rec = dir.path().join("rec.csv");
    let out = run(&[
        "simulate",
        "--scheme",
        "2",
        "--shots",
        "40000",
        "--seed",
        "3",
        "--estimates-out",
        est.to_str().unwrap(),
        "--records-out",
        rec.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = estimates(&est);
    assert_eq!(rows.len(), 1);
    let (s, err) = (rows[0][1], rows[0][2]);
    assert!((s - 2.0 * SQRT_2).abs() < 3.0 * err, "{s} ± {err}");
    assert_eq!(rows[0][12], 1.0);

    let manifest = dir.path().join("est.csv.manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["config"]["scheme"], 2);
    assert_eq!(m["seed"], 3);
    assert!(m["timestamp_unix"].as_u64().unwrap() > 0);

    let est2 = dir.path().join("again.csv");
    let out = run(&[
        "simulate",
        "--config",
        manifest.to_str().unwrap(),
        "--estimates-out",
        est2.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&est).unwrap(), fs::read(&est2).unwrap());
    let m2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("again.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["reproducibility_hash"], m2["reproducibility_hash"]);
    assert_eq!(fs::read_to_string(&rec).unwrap().lines().count(), 40_002);
}

#[test]
fn simulate_scheme3_shows_a_violating_bin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "scheme = 3\nxi_minus_eta = \"0.75pi\"\nshots = 60000\nbins = 16\nseed = 12\nformat = \"csv\"\n",
    )
    .unwrap();
    let est = dir.path().join("est.csv");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--estimates-out", est.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = estimates(&est);
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().any(|r| r[12] == 1.0 && r[1] - 3.0 * r[2] > 2.0));
}

#[test]
fn simulate_json_estimates() {
    let out = run(&["simulate", "--scheme", "1", "--shots", "2000", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["bins"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(run(&["simulate", "--scheme", "1", "--bins", "4"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--scheme", "4"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--xi-minus-eta", "pie"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--reference", "number"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "shots = 10\nsohts = 3\n").unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sohts"));
    assert_eq!(run(&["simulate", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_fails_honestly() {
    let out = run(&["verify", "--shots", "0", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("check,deviation,tolerance,verdict\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")));
    assert!(text.contains("readout-ratio-derived"));

    // an impossible tolerance must fail with status 1
    let out = run(&["verify", "--shots", "0", "--representation-tolerance", "0", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(1));
}
