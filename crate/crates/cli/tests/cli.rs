use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rmc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmc"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("running rmc")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const LS_M1: &str = r#"
seed = 3
[model]
instance = "M1"
[solver]
kind = "ls"
n = 4000
method = { kind = "lm", basis = { family = "poly", degree = 2 } }
"#;

const SWING: &str = r#"
seed = 5
[model]
dim = 1
maturity = 1.0
dt = 0.05
r = 0.05
sigma = 0.3
x0 = 100.0
strike = 100.0
payoff = "put"
dynamics = "gbm"
[solver]
kind = "fixed"
design = { domain = { type = "box", lower = [60.0], upper = [100.0] }, fill = "lattice", n = 20, nrep = 20 }
method = { kind = "gp", hyper = { mode = "fixed", lengthscale = 10.0, variance = 4.0 } }
[swing]
n_swing = 2
refract = 0.1
"#;

fn price_of(stdout: &str) -> f64 {
    stdout.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn solve_paths_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m1.toml", LS_M1);
    let out = dir.path().join("run");
    ok(&rmc(&out, &["solve", cfg.to_str().unwrap()]));
    assert!(out.join("fit.json").exists());
    assert!(out.join("diagnostics.csv").exists());
    assert!(out.join("solve.manifest.json").exists());
    ok(&rmc(&out, &["paths", "M1", "--n", "2000", "--seed", "9"]));
    let test = out.join("M1-n2000-s9.paths");
    assert!(test.exists());
    let stdout = ok(&rmc(
        &out,
        &[
            "eval",
            out.join("fit.json").to_str().unwrap(),
            test.to_str().unwrap(),
            "--per-path",
        ],
    ));
    let price = price_of(&stdout);
    assert!((1.5..3.0).contains(&price), "{price}");
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(record["test_set"]["n_paths"], 2000);
    let per_path = std::fs::read_to_string(out.join("eval_paths.csv")).unwrap();
    assert_eq!(per_path.lines().count(), 2001);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m1.toml", LS_M1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&rmc(
        &a,
        &["--threads", "1", "solve", cfg.to_str().unwrap()],
    ));
    ok(&rmc(
        &b,
        &["--threads", "3", "solve", cfg.to_str().unwrap()],
    ));
    assert_eq!(
        std::fs::read(a.join("fit.json")).unwrap(),
        std::fs::read(b.join("fit.json")).unwrap()
    );
    ok(&rmc(&a, &["paths", "M1", "--n", "1500"]));
    ok(&rmc(&b, &["paths", "M1", "--n", "1500"]));
    let name = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .find(|n| n.to_string_lossy().ends_with(".paths"))
        .unwrap();
    assert_eq!(
        std::fs::read(a.join(&name)).unwrap(),
        std::fs::read(b.join(&name)).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m1.toml", LS_M1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&rmc(&a, &["solve", cfg.to_str().unwrap()]));
    ok(&rmc(&b, &["solve", cfg.to_str().unwrap(), "--seed", "4"]));
    assert_ne!(
        std::fs::read(a.join("fit.json")).unwrap(),
        std::fs::read(b.join("fit.json")).unwrap()
    );
}

#[test]
fn swing_rights_route_through_eval() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "swing.toml", SWING);
    let out = dir.path().join("run");
    ok(&rmc(&out, &["solve", cfg.to_str().unwrap()]));
    ok(&rmc(
        &out,
        &["paths", "--config", cfg.to_str().unwrap(), "--n", "2000"],
    ));
    let test = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "paths"))
        .unwrap();
    let fit = out.join("fit.json");
    let v1 = price_of(&ok(&rmc(
        &out,
        &[
            "eval",
            fit.to_str().unwrap(),
            test.to_str().unwrap(),
            "--rights",
            "1",
        ],
    )));
    let v2 = price_of(&ok(&rmc(
        &out,
        &[
            "eval",
            fit.to_str().unwrap(),
            test.to_str().unwrap(),
            "--rights",
            "2",
        ],
    )));
    assert!(v2 > v1 && v2 < 2.0 * v1 + 0.5, "{v1} {v2}");
    let too_many = rmc(
        &out,
        &[
            "eval",
            fit.to_str().unwrap(),
            test.to_str().unwrap(),
            "--rights",
            "3",
        ],
    );
    assert!(!too_many.status.success());
}

#[test]
fn single_fit_rejects_extra_rights() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "m1.toml", LS_M1);
    let out = dir.path().join("run");
    ok(&rmc(&out, &["solve", cfg.to_str().unwrap()]));
    ok(&rmc(&out, &["paths", "M1", "--n", "1000", "--seed", "2"]));
    let o = rmc(
        &out,
        &[
            "eval",
            out.join("fit.json").to_str().unwrap(),
            out.join("M1-n1000-s2.paths").to_str().unwrap(),
            "--rights",
            "2",
        ],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("swing"));
}

#[test]
fn inconsistent_grid_names_fields() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        r#"
[model]
dim = 1
maturity = 1.0
dt = 0.03
r = 0.06
sigma = 0.2
x0 = 40.0
strike = 40.0
payoff = "put"
dynamics = "gbm"
[solver]
kind = "ls"
n = 1000
method = { kind = "lm", basis = { family = "poly", degree = 2 } }
"#,
    );
    let o = rmc(&dir.path().join("run"), &["solve", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dt") && err.contains("maturity"), "{err}");
}

#[test]
fn bench_matrix_with_reps() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench");
    let stdout = ok(&rmc(
        &out,
        &[
            "bench",
            "--instances",
            "M1,M2",
            "--presets",
            "S1-LM,S4-TvR,S6-BW",
            "--reps",
            "2",
            "--n",
            "2000",
        ],
    ));
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "model,solver,price,se,across_run_sd,time_secs");
    assert_eq!(lines.len(), 7);
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 6);
        for c in &cells[2..] {
            assert!(c.parse::<f64>().is_ok(), "{row}");
        }
    }
    assert_eq!(
        std::fs::read_to_string(out.join("bench.csv")).unwrap(),
        stdout
    );
    assert!(out.join("bench.manifest.json").exists());
}

#[test]
fn empty_instance_set_gives_empty_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bench.toml", "[bench]\ninstances = []\n");
    let out = dir.path().join("bench");
    let stdout = ok(&rmc(&out, &["bench", "--config", cfg.to_str().unwrap()]));
    assert_eq!(stdout, "model,solver,price,se,across_run_sd,time_secs\n");
}

#[test]
fn bench_sweep_from_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.toml",
        r#"
[bench]
instances = []
test_paths = 2000
[[bench.sweep]]
instance = "M1"
preset = "S6-BW"
budgets = [4000, 8000]
"#,
    );
    let out = dir.path().join("bench");
    ok(&rmc(&out, &["bench", "--config", cfg.to_str().unwrap()]));
    let sweep = std::fs::read_to_string(out.join("sweep-M1-S6-BW.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn unknown_instance_is_an_error() {
    let dir = TempDir::new().unwrap();
    let o = rmc(&dir.path().join("x"), &["paths", "M0"]);
    assert!(!o.status.success());
}
