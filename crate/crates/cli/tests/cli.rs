use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn newton_flow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_newton-flow")).args(args).output().unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("newton-flow-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

fn only_run_dir(root: &Path, problem: &str) -> PathBuf {
    let runs: Vec<_> = fs::read_dir(root.join(problem)).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1, "{runs:?}");
    runs[0].clone()
}

#[test]
fn zoo_list_names_every_builtin() {
    let out = newton_flow(&["zoo", "list"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    for name in [
        "quadratic_newton",
        "quadratic_precond",
        "abs_value",
        "quartic",
        "nonunique_min",
        "huber_composite",
        "constrained_box",
    ] {
        assert!(stdout.contains(name), "missing {name}:\n{stdout}");
    }
}

#[test]
fn run_writes_outputs_and_rates_reads_them_back() {
    let root = scratch("run");
    let out = newton_flow(&["run", "quadratic_newton", "--h", "0.001", "--t-end", "5", "--out", root.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = only_run_dir(&root, "quadratic_newton");
    for file in ["trajectory.csv", "report.json", "manifest.txt"] {
        assert!(dir.join(file).is_file(), "missing {file}");
    }

    let csv = dir.join("trajectory.csv");
    let out = newton_flow(&["rates", csv.to_str().unwrap(), "--x-star", "0,0"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["regime"]["kind"], "exponential");
    let alpha = report["regime"]["alpha"].as_f64().unwrap();
    assert!((alpha - 1.0).abs() <= 0.05, "{report}");
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn negative_step_is_a_config_error() {
    let root = scratch("neg");
    let out = newton_flow(&["run", "quadratic_newton", "--h", "-1", "--out", root.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "ConfigError");
    assert!(!root.join("quadratic_newton").exists());
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn unknown_problem_is_reported() {
    let out = newton_flow(&["run", "no_such_problem"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "UnknownProblem");
}

#[test]
fn registry_extends_and_rejects_duplicates() {
    let root = scratch("registry");
    let entry = |name: &str| {
        format!(
            "[[problem]]\nname = \"{name}\"\ndimension = 1\nphi1 = {{ id = \"l1\", weight = 2.0 }}\n\
             lower = [-3.0]\nupper = [3.0]\nx0 = [1.0]\nconfig = {{ step_h = 0.01, t_end = 1.5 }}\n"
        )
    };
    let good = root.join("good.toml");
    fs::write(&good, entry("scaled_abs")).unwrap();
    let out = newton_flow(&["--registry", good.to_str().unwrap(), "zoo", "list"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("scaled_abs"));

    let dup = root.join("dup.toml");
    fs::write(&dup, format!("{}\n{}", entry("scaled_abs"), entry("scaled_abs"))).unwrap();
    let out = newton_flow(&["--registry", dup.to_str().unwrap(), "zoo", "list"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "DuplicateName");
    fs::remove_dir_all(root).unwrap();
}
