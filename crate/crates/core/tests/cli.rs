use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tangle-fluid"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fluid_fixed_point_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fp");
    let o = run(&["fluid", "--h", "1", "--T", "4", "--dt", "0.01", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("fluid.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,a,b,da"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 301);
    for r in &rows {
        assert!((r[1] - 1.0).abs() < 1e-12 && (r[2] - 2.0).abs() < 1e-12);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["success"], true);
    assert_eq!(manifest["mode"], "fluid");
}

#[test]
fn sweep_is_deterministic_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.toml");
    fs::write(
        &cfg,
        "lambda = [10, 40]\nh = 1.0\nT = 3.0\nreplicas = 6\nbase_seed = 7\na_h = 1.0\nu = [1.0]\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = tmp.path().join(format!("w{workers}"));
        let o = bin()
            .args(["sweep", "--config", path(&cfg), "--out", path(&out)])
            .env("TANGLE_WORKERS", workers)
            .output()
            .unwrap();
        assert!(o.status.code().is_some(), "{o:?}");
        outputs.push((
            fs::read(out.join("sweep.csv")).unwrap(),
            fs::read(out.join("summary.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let sweep = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(sweep.starts_with("lambda,replica,seed,tries,sup_dev_A,sup_dev_B\n"));
    assert_eq!(sweep.lines().count(), 13);
}

#[test]
fn refuses_non_empty_output_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let args = ["fluid", "--h", "1", "--T", "2", "--out", path(&out)];
    assert!(run(&args).status.success());
    let again = run(&args);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(run(&forced).status.success());
}

#[test]
fn config_errors_name_the_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "lambda = 100\nh = 0.123\nT = 1.0\nbogus = 3\n").unwrap();
    let o = run(&["simulate", "--config", path(&cfg), "--out", path(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lambda*h not integer"), "{err}");
    assert!(err.contains("bogus"), "{err}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn mode_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.toml");
    fs::write(&cfg, "mode = \"sweep\"\nlambda = 10\nh = 1.0\nT = 3.0\n").unwrap();
    let o = run(&["fluid", "--config", path(&cfg), "--out", path(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_traces_and_coupling() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = run(&[
        "simulate", "--lambda", "10,20", "--h", "1", "--T", "3", "--replicas", "2", "--seed", "5",
        "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["trace_lambda10_r000.csv", "trace_lambda20_r001.csv", "coupling.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let trace = fs::read_to_string(out.join("trace_lambda10_r000.csv")).unwrap();
    assert!(trace.starts_with("n,t,X,W,L,U\n"));
    assert_eq!(trace.lines().count(), 1 + 21);
}

#[test]
fn failed_checks_exit_nonzero_with_json_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    // Rates listed largest first, so the medians cannot decrease.
    let o = run(&[
        "sweep", "--lambda", "6400,100", "--h", "1", "--T", "3", "--replicas", "9", "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["success"], false);
    assert_eq!(v["failed_checks"][0]["name"], "medians_decreasing");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["success"], false);
}
