use std::path::Path;

use epinn_cli::checkpoint::load_checkpoint;
use epinn_cli::config::ExperimentConfig;
use epinn_cli::experiment::*;
use epinn_cli::CliError;
use serde_json::Value;

fn config(dir: &Path, text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text, dir).unwrap()
}

const POISSON: &str = r#"
[experiment]
problem = "poisson1d"
seed = 4
output_dir = "OUT"
[data]
n_train = 40
n_test = 30
[grid]
points_per_dim = 11
[train]
phase1_epochs = 400
phase2_epochs = 400
log_every = 100
[evaluation]
gof_samples = 40
gof_points_per_dim = 21
[ensemble]
n_members = 2
epochs = 300
warmup_epochs = 60
omega_fit_epochs = 30
hidden = [8, 8]
"#;

fn all_numbers_finite(v: &Value) -> bool {
    match v {
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        Value::Array(a) => a.iter().all(all_numbers_finite),
        Value::Object(o) => o.values().all(all_numbers_finite),
        _ => true,
    }
}

fn read_summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn poisson_run_writes_complete_report_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(dir.path(), &POISSON.replace("OUT", "a"));
    let run = run_experiment(&a).unwrap();
    let out = dir.path().join("a");
    for f in [
        "config.json",
        "data/train.csv",
        "data/test.csv",
        "data/meta.json",
        "checkpoint_phase1.epinn",
        "checkpoint.epinn",
        "train_log.csv",
        "posterior.csv",
        "predictions.csv",
        "summary.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let s = read_summary(&out);
    for key in [
        "problem", "seed", "omega", "priors", "sigma2_r", "gof", "calibration", "data", "training", "runtime",
    ] {
        assert!(!s[key].is_null(), "missing {key}");
    }
    for key in ["mean", "mode", "std", "ci68"] {
        assert_eq!(s["omega"][key].as_array().unwrap().len(), 2, "{key}");
    }
    assert!(s["gof"]["p_value"].as_f64().is_some());
    assert!(s["calibration"]["mce"].as_f64().is_some());
    assert_eq!(s["method"], "e-pinn");
    assert!(s["spearman"].is_null());
    assert!(all_numbers_finite(&s));

    let posterior = std::fs::read_to_string(out.join("posterior.csv")).unwrap();
    assert!(posterior.starts_with("x0,sigma_f2,density\n"));
    assert_eq!(posterior.lines().count(), 1 + 121);
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("x,gamma,sigma_p,lo68,hi68,lo95,hi95\n"));
    assert_eq!(preds.lines().count(), 1 + 21);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 8);

    let ckpt = load_checkpoint(&out.join("checkpoint.epinn")).unwrap();
    assert_eq!(ckpt.model().unwrap(), run.model);
    assert_eq!(ckpt.sigma2_r(), run.summary.sigma2_r);
    // recomputing the posterior from the checkpoint reproduces the run
    let again = posterior_from_checkpoint(&a, &ckpt).unwrap();
    assert_eq!(again, run.summary.omega);
    let metrics = metrics_from_checkpoint(&a, &ckpt).unwrap();
    assert_eq!(metrics.calibration, run.summary.calibration);

    let b = config(dir.path(), &POISSON.replace("OUT", "b"));
    let rerun = run_experiment(&b).unwrap();
    assert_eq!(rerun.summary.deterministic_json(), run.summary.deterministic_json());
    let mut sa = read_summary(&out);
    let mut sb = read_summary(&dir.path().join("b"));
    strip_wall_clock(&mut sa);
    strip_wall_clock(&mut sb);
    assert_eq!(sa, sb);
    for f in ["checkpoint.epinn", "posterior.csv", "predictions.csv", "train_log.csv", "data/train.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }

    let c = config(dir.path(), &POISSON.replace("OUT", "c").replace("seed = 4", "seed = 5"));
    assert_ne!(run_experiment(&c).unwrap().summary.deterministic_json(), run.summary.deterministic_json());
}

#[test]
fn ensemble_run_shares_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &POISSON.replace("OUT", "e"));
    let run = run_ensemble_experiment(&cfg).unwrap();
    let s = read_summary(&dir.path().join("e"));
    assert_eq!(s["method"], "deep-ensemble");
    assert!(all_numbers_finite(&s));
    assert_eq!(s["omega"]["ci68"].as_array().unwrap().len(), 2);
    assert_eq!(s["omega"]["ci68_percentile"].as_array().unwrap().len(), 2);
    assert_eq!(s["ensemble"]["member_seeds"], serde_json::json!([4, 5]));
    assert!(dir.path().join("e/members.csv").is_file());
    let preds = std::fs::read_to_string(dir.path().join("e/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 21);
    for (i, (m, sd)) in run.result.omega_mean.iter().zip(&run.result.omega_std).enumerate() {
        assert_eq!(run.summary.omega.ci68[i], (m - sd, m + sd));
    }

    let epinn_keys: Vec<String> = {
        let e = run_experiment(&config(dir.path(), &POISSON.replace("OUT", "p"))).unwrap();
        let v = serde_json::to_value(&e.summary).unwrap();
        v.as_object().unwrap().keys().cloned().collect()
    };
    let ens_keys: Vec<String> = s.as_object().unwrap().keys().cloned().collect();
    assert_eq!(epinn_keys, ens_keys);

    let again = run_ensemble_experiment(&config(dir.path(), &POISSON.replace("OUT", "e2"))).unwrap();
    assert_eq!(again.summary.deterministic_json(), run.summary.deterministic_json());
}

#[test]
fn fisher_run_reports_spearman() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        r#"
        [experiment]
        problem = "fisher-kpp"
        output_dir = "f"
        [data]
        n_train = 60
        n_pool = 100
        n_test = 40
        [grid]
        points_per_dim = 6
        [train]
        phase1_epochs = 150
        phase2_epochs = 150
        [evaluation]
        gof_samples = 20
        gof_points_per_dim = 5
        "#,
    );
    let run = run_experiment(&cfg).unwrap();
    let sp = run.summary.spearman.as_ref().unwrap();
    assert_eq!(sp.n, 60);
    assert!(sp.r_s.abs() <= 1.0 && (0.0..=1.0).contains(&sp.p_value));
    let preds = std::fs::read_to_string(dir.path().join("f/predictions.csv")).unwrap();
    assert!(preds.starts_with("x,t,gamma,"));
    assert_eq!(preds.lines().count(), 1 + 25);
}

#[test]
fn bergman_run_reports_indices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        r#"
        [experiment]
        problem = "bergman"
        output_dir = "b"
        [grid]
        points_per_dim = 5
        [train]
        phase1_epochs = 100
        phase2_epochs = 100
        [evaluation]
        gof_samples = 25
        "#,
    );
    let run = run_experiment(&cfg).unwrap();
    let idx = run.summary.bergman.as_ref().unwrap();
    assert_eq!(idx.n_samples, 25);
    let bounds = &cfg.bounds;
    for s in [idx.s_g, idx.s_i] {
        assert!(s.p16 <= s.median && s.median <= s.p84 && s.std >= 0.0);
    }
    assert!(idx.s_g.p16 >= bounds[0].0 && idx.s_g.p84 <= bounds[0].1);
    let lo = bounds[2].0 / bounds[1].1;
    let hi = bounds[2].1 / bounds[1].0;
    assert!(idx.s_i.p16 >= lo && idx.s_i.p84 <= hi);
    assert!(dir.path().join("b/data/ivgtt.csv").is_file());
    assert!(all_numbers_finite(&serde_json::to_value(&run.summary).unwrap()));
    let ckpt = load_checkpoint(&dir.path().join("b/checkpoint.epinn")).unwrap();
    assert!(ckpt.bergman_record.is_some());
}

#[test]
fn failing_stage_is_named_and_partial_artifacts_remain() {
    let dir = tempfile::tempdir().unwrap();
    // diffusion coefficients this large overflow every residual sum on the grid
    let cfg = config(
        dir.path(),
        r#"
        [experiment]
        problem = "fisher-kpp"
        output_dir = "x"
        [data]
        n_train = 30
        n_pool = 30
        n_test = 10
        [grid]
        points_per_dim = 4
        bounds = [[0.5, 3.0], [1e200, 1e201]]
        [train]
        phase1_epochs = 20
        phase2_epochs = 20
        "#,
    );
    let err = run_experiment(&cfg).unwrap_err();
    let out = dir.path().join("x");
    let failure: Value = serde_json::from_str(&std::fs::read_to_string(out.join("failure.json")).unwrap()).unwrap();
    assert_eq!(failure["stage"], "priors", "{err}");
    assert!(matches!(err, CliError::Numerical { stage: Some("priors"), .. } | CliError::Config(_)));
    assert!(out.join("checkpoint_phase1.epinn").is_file());
    assert!(out.join("train_log.csv").is_file());
    assert!(!out.join("summary.json").exists());
}
