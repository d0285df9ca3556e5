//! Runs through the experiment layer: files on disk, report contents,
//! registry problems and suite plumbing.

use std::fs;
use std::path::PathBuf;

use newton_flow::analysis::Regime;
use newton_flow::experiment::{rates_from_csv, resolve_config, run_experiment, verify_all, RunOptions};
use newton_flow::zoo::{builtin, find, with_registry};
use newton_flow::{Error, Vector};

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("newton-flow-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_writes_csv_report_and_manifest() {
    let root = scratch("run");
    let zoo = builtin();
    let p = find(&zoo, "abs_value").unwrap();
    let opts = RunOptions {
        out_root: Some(root.clone()),
        ..RunOptions::for_problem(p)
    };
    let outcome = run_experiment(p, &opts).unwrap();
    assert!(outcome.passed());
    let dir = outcome.dir.unwrap();
    assert!(dir.starts_with(root.join("abs_value")));

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    for key in ["problem", "operator", "config", "seed", "regime", "parameters", "certificates", "worst_margins", "gates", "passed"] {
        assert!(report.get(key).is_some(), "report.json lacks {key}");
    }
    assert_eq!(report["problem"], "abs_value");
    let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("passed = true"));

    // The stored trajectory re-classifies to the same finite-time regime.
    let csv = fs::File::open(dir.join("trajectory.csv")).unwrap();
    let rates = rates_from_csv(csv, &Vector::zeros(1)).unwrap();
    let Regime::FiniteTime { t_star } = rates.regime else { panic!("{:?}", rates.regime) };
    assert!((t_star - 1.0).abs() <= 2.0 * p.default_config.step_h);

    // A second run never overwrites the first.
    let again = run_experiment(p, &opts).unwrap().dir.unwrap();
    assert_ne!(again, dir);
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn rates_reject_mismatched_dimension() {
    let zoo = builtin();
    let p = find(&zoo, "quadratic_newton").unwrap();
    let mut opts = RunOptions::for_problem(p);
    opts.config = opts.config.with_step(1e-2, 1.0);
    let outcome = run_experiment(p, &opts).unwrap();
    let mut buf = Vec::new();
    outcome.trajectory.write_csv(&mut buf).unwrap();
    assert!(matches!(rates_from_csv(buf.as_slice(), &Vector::zeros(3)), Err(Error::InvalidParameter(_))));
}

#[test]
fn registry_problem_runs_like_a_builtin() {
    let text = r#"
        [[problem]]
        name = "scaled_abs"
        dimension = 1
        phi1 = { id = "l1", weight = 2.0 }
        lower = [-3.0]
        upper = [3.0]
        x0 = [1.0]
        config = { step_h = 0.01, t_end = 1.5 }
    "#;
    let zoo = with_registry(text).unwrap();
    assert_eq!(zoo.len(), builtin().len() + 1);
    let p = find(&zoo, "scaled_abs").unwrap();
    let outcome = run_experiment(p, &RunOptions::for_problem(p)).unwrap();
    // Unit speed towards 0 with |v| = 2: reaches the kink at t = 1/2.
    let last = outcome.trajectory.last_state()[0];
    assert!(last.abs() <= 1e-12, "{last}");
    assert!(outcome.report.gates.iter().filter(|g| g.gated).all(|g| g.passed));

    let clash = text.replace("scaled_abs", "abs_value");
    assert!(matches!(with_registry(&clash), Err(Error::DuplicateName(n)) if n == "abs_value"));
}

#[test]
fn config_errors_surface_before_running() {
    let zoo = builtin();
    let p = find(&zoo, "quadratic_newton").unwrap();
    let bad = [("step_h".to_string(), "-1".to_string())];
    assert!(matches!(resolve_config(p, None, &bad), Err(Error::ConfigError(_))));
    assert!(matches!(verify_all("default", &zoo, &bad, None), Err(Error::ConfigError(_))));
    assert!(verify_all("no-such-suite", &zoo, &[], None).is_err());
}
