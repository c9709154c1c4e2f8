use std::path::Path;

use epinn::trainer::Collocation;
use epinn_cli::config::{DataSource, ExperimentConfig, ProblemName};
use epinn_cli::CliError;

fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::from_toml_str(text, Path::new("/cfg"))
}

#[test]
fn problem_defaults() {
    let p = ExperimentConfig::defaults(ProblemName::Poisson1d).unwrap();
    assert_eq!((p.data.n_train, p.data.n_test), (240, 150));
    assert_eq!(p.points_per_dim, 51);
    assert_eq!((p.train.phase1_epochs, p.train.phase2_epochs), (50_000, 50_000));
    assert_eq!((p.train.phase1_lr, p.train.phase2_lr), (1e-4, 5e-4));
    // tenth of the peak of the reference solution
    let fine = epinn::pde::solve_poisson((1.0 / 3.0, 0.02), 1001).unwrap();
    let peak = fine.iter().cloned().fold(0.0, f64::max);
    assert!((p.data.noise_amplitude - 0.1 * peak).abs() < 1e-15);
    assert_eq!(p.data.source, DataSource::Generate);

    let f = ExperimentConfig::defaults(ProblemName::FisherKpp).unwrap();
    assert_eq!((f.data.n_train, f.data.n_pool, f.data.n_test), (1000, 5000, 4000));
    assert_eq!(f.points_per_dim, 26);
    assert_eq!(f.bounds, vec![(0.5, 3.0), (2.0, 12.0)]);
    let r = f.data.noise_region.unwrap();
    assert_eq!((r.x_lo, r.x_hi, r.t_lo, r.t_hi), (-10.0, 10.0, 2.0, 8.0));

    let b = ExperimentConfig::defaults(ProblemName::Bergman).unwrap();
    assert_eq!(b.bounds.len(), 3);
}

#[test]
fn keys_override_defaults_and_paths_resolve_against_config_dir() {
    let cfg = parse(
        r#"
        [experiment]
        problem = "fisher-kpp"
        seed = 17
        output_dir = "runs/a"
        [data]
        n_train = 300
        noise_region = []
        [grid]
        points_per_dim = 9
        bounds = [[1.0, 2.0], [3.0, 9.0]]
        [train]
        hidden = [8, 8, 8]
        collocation = [0.0, 1.0, 2.0, 3.0]
        "#,
    )
    .unwrap();
    assert_eq!(cfg.problem, ProblemName::FisherKpp);
    assert_eq!((cfg.seed, cfg.train.seed, cfg.ensemble.seed), (17, 17, 17));
    assert_eq!(cfg.output_dir, Path::new("/cfg/runs/a"));
    assert_eq!(cfg.data.n_train, 300);
    assert_eq!(cfg.data.noise_region, None);
    assert_eq!(cfg.bounds, vec![(1.0, 2.0), (3.0, 9.0)]);
    assert_eq!(cfg.train.hidden, vec![8, 8, 8]);
    assert_eq!(cfg.ensemble.hidden, vec![8, 8, 8]);
    assert_eq!(cfg.train.collocation, Collocation::Points(vec![0.0, 1.0, 2.0, 3.0]));
}

#[test]
fn invalid_configs_are_rejected_before_compute() {
    let bad = [
        "[experiment]\nproblem = \"heat\"",
        "[experiment]\nunknown_key = 1",
        "[grid]\nbounds = [[0.5, 0.1], [0.01, 0.05]]",
        "[grid]\nbounds = [[0.0, 1.0]]",
        "[grid]\npoints_per_dim = 1",
        "[data]\nnoise_amplitude = -1.0",
        "[data]\nnoise_region = [-10.0, 10.0, 2.0, 8.0]",
        "[experiment]\nproblem = \"fisher-kpp\"\n[data]\nnoise_region = [-30.0, 10.0, 2.0, 8.0]",
        "[experiment]\nproblem = \"fisher-kpp\"\n[data]\nnoise_region = [1.0, 2.0, 3.0]",
        "[data]\nsource = \"file\"\ntrain_csv = \"missing.csv\"",
        "[data]\nbergman_csv = \"x.csv\"",
        "[train]\ncollocation = \"everywhere\"",
        "[experiment]\nproblem = \"fisher-kpp\"\n[train]\ncollocation = [1.0, 2.0, 3.0]",
        "[train]\nphase1_lr = 0.0",
        "[evaluation]\nlevels = [0.5, 0.2]",
        "[data]\nbasal_glucose = 90.0",
        "[data]\nn_train = 300\nn_pool = 100",
        "not toml at all [",
    ];
    for text in bad {
        match parse(text) {
            Err(CliError::Config(_)) => {}
            other => panic!("{text:?} gave {other:?}"),
        }
    }
}

#[test]
fn load_reads_files_and_reports_missing_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "[experiment]\noutput_dir = \"out\"\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.output_dir, dir.path().join("out"));
    let err = ExperimentConfig::load(&dir.path().join("absent.toml")).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn shipped_configs_match_the_defaults() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, problem) in [
        ("poisson.toml", ProblemName::Poisson1d),
        ("fisher.toml", ProblemName::FisherKpp),
        ("bergman.toml", ProblemName::Bergman),
    ] {
        let cfg = ExperimentConfig::load(&dir.join(file)).unwrap();
        let mut d = ExperimentConfig::defaults(problem).unwrap();
        d.output_dir = cfg.output_dir.clone();
        assert_eq!(format!("{cfg:?}"), format!("{d:?}"), "{file}");
    }
}
