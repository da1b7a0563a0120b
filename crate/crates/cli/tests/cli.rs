use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn heatgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatgrad"))
        .args(args)
        .env_remove("HEATGRAD_SEED")
        .output()
        .expect("spawn heatgrad")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const GRAD: &[&str] = &[
    "estimate", "grad", "--manifold", "euclidean:2", "--x", "0,0", "--v", "1,0", "--t", "0.5",
    "--observable", "sin_plus_square", "--paths", "400", "--steps", "16", "--seed", "3",
];

#[test]
fn estimate_prints_summary_json() {
    let out = heatgrad(GRAD);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["n_paths"], 400);
    assert!(v["value"].as_f64().unwrap().is_finite());
    assert!(v["stderr"].as_f64().unwrap() > 0.0);
    // Exact value is e^{-1/4} at t = 0.5.
    let z = (v["value"].as_f64().unwrap() - (-0.25f64).exp()) / v["stderr"].as_f64().unwrap();
    assert!(z.abs() < 5.0, "z = {z}");
}

#[test]
fn unsupported_manifold_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = heatgrad(&[
        "estimate", "grad", "--manifold", "torus", "--x", "0,0", "--v", "1,0", "--t", "0.5",
        "--observable", "square:0", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn varadhan_stdout_header() {
    let out = heatgrad(&[
        "varadhan", "--manifold", "euclidean:2", "--x", "0,0", "--y", "0.5,0", "--t-grid", "0.5,0.2,0.1",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,vlog,vgrad,vhess,warn"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn csv_flag_appends_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let mut args = GRAD.to_vec();
    args.extend(["--csv", csv.to_str().unwrap()]);
    assert!(heatgrad(&args).status.success());
    assert!(heatgrad(&args).status.success());
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
}

fn data_files(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "metadata.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn config_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        r#"
kind = "grad"
manifold = { kind = "sphere2" }
seed = 11
x = [0.6, 0.0, 0.8]
v = [0.8, 0.0, -0.6]
t = 0.4
paths = 300
steps = 16
observable = { kind = "coordinate", index = 2 }
"#,
    )
    .unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let workers = if *name == "a" { "1" } else { "2" };
            let out = heatgrad(&[
                "estimate", "grad", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
                "--workers", workers,
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out_dir
        })
        .collect();
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs[0].join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 11);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["wall_time_s"].as_f64().unwrap() >= 0.0);
    let (a, b) = (data_files(&runs[0]), data_files(&runs[1]));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_comes_from_environment_when_flag_is_absent() {
    let args: Vec<_> = GRAD.iter().copied().filter(|a| *a != "--seed" && *a != "3").collect();
    let env_run = Command::new(env!("CARGO_BIN_EXE_heatgrad")).args(&args).env("HEATGRAD_SEED", "3").output().unwrap();
    assert_eq!(stdout(&env_run), stdout(&heatgrad(GRAD)));
}
