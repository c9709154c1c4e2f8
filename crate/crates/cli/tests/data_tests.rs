use std::path::Path;

use epinn::pde::{fisher_travelling_wave, solve_bergman, solve_poisson, TRUE_D, TRUE_R};
use epinn_cli::config::{DataConfig, ExperimentConfig, NoiseRegion, ProblemName};
use epinn_cli::data::*;
use epinn_cli::CliError;

fn poisson_cfg(amp: f64) -> DataConfig {
    DataConfig {
        noise_amplitude: amp,
        ..ExperimentConfig::defaults(ProblemName::Poisson1d).unwrap().data
    }
}

fn fisher_cfg(region: Option<NoiseRegion>, n: usize) -> DataConfig {
    DataConfig {
        noise_region: region,
        n_train: n,
        n_pool: 2 * n,
        n_test: n,
        ..ExperimentConfig::defaults(ProblemName::FisherKpp).unwrap().data
    }
}

fn peak() -> f64 {
    solve_poisson((1.0 / 3.0, 0.02), 1001).unwrap().iter().cloned().fold(0.0, f64::max)
}

#[test]
fn poisson_without_noise_matches_truth() {
    let (train, test) = gen_poisson_dataset(&poisson_cfg(0.0), 1).unwrap();
    assert_eq!((train.len(), test.len()), (240, 150));
    assert_eq!(train.targets, *train.truth.as_ref().unwrap());
    assert_eq!(test.targets, *test.truth.as_ref().unwrap());
}

#[test]
fn poisson_noise_is_bounded_and_boundaries_are_clean() {
    let cfg = poisson_cfg(0.1 * peak());
    let (train, test) = gen_poisson_dataset(&cfg, 2).unwrap();
    assert_eq!(&train.inputs[..2], &[0.0, 1.0]);
    let truth = train.truth.as_ref().unwrap();
    assert_eq!(&train.targets[..2], &truth[..2]);
    for ds in [&train, &test] {
        let t = ds.truth.as_ref().unwrap();
        let nm = ds.noise_mag.as_ref().unwrap();
        for i in 0..ds.len() {
            let e = (ds.targets[i] - t[i]).abs();
            assert!(e <= 0.05 * peak() + 1e-15);
            assert!((e - nm[i]).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&ds.inputs[i]));
        }
    }
    assert!(train.noise_mag.as_ref().unwrap()[2..].iter().any(|&e| e > 0.01 * peak()));
}

#[test]
fn fixed_seed_gives_byte_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = poisson_cfg(0.1 * peak());
    let write = |name: &str, seed| {
        let (train, _) = gen_poisson_dataset(&cfg, seed).unwrap();
        let p = dir.path().join(name);
        write_dataset_csv(&p, &train).unwrap();
        std::fs::read(p).unwrap()
    };
    assert_eq!(write("a.csv", 9), write("b.csv", 9));
    assert_ne!(write("a.csv", 9), write("c.csv", 10));
}

#[test]
fn dataset_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = gen_fisher_dataset(&fisher_cfg(None, 50), 3).unwrap();
    let p = dir.path().join("f.csv");
    write_dataset_csv(&p, &train).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("x,t,y,truth,noise_mag\n"));
    assert_eq!(read_dataset_csv(&p, 2).unwrap(), train);
    assert!(matches!(read_dataset_csv(&p, 1), Err(CliError::Config(_))));

    // blank truth and noise columns are allowed
    let q = dir.path().join("g.csv");
    std::fs::write(&q, "x,y,truth,noise_mag\n0.1,2.0,,\n0.2,3.0,,\n").unwrap();
    let ds = read_dataset_csv(&q, 1).unwrap();
    assert_eq!(ds.targets, vec![2.0, 3.0]);
    assert!(ds.truth.is_none() && ds.noise_mag.is_none());

    std::fs::write(&q, "x,y,truth,noise_mag\n0.1,abc,,\n").unwrap();
    let msg = read_dataset_csv(&q, 1).unwrap_err().to_string();
    assert!(msg.contains("line 2"), "{msg}");
}

#[test]
fn fisher_empty_mask_is_clean() {
    let (train, test) = gen_fisher_dataset(&fisher_cfg(None, 200), 4).unwrap();
    for ds in [&train, &test] {
        assert_eq!(ds.targets, *ds.truth.as_ref().unwrap());
        assert!(ds.noise_mag.as_ref().unwrap().iter().all(|&e| e == 0.0));
    }
}

#[test]
fn fisher_noise_only_inside_mask() {
    let region = NoiseRegion {
        x_lo: -10.0,
        x_hi: 10.0,
        t_lo: 2.0,
        t_hi: 8.0,
    };
    let (train, _) = gen_fisher_dataset(&fisher_cfg(Some(region), 400), 5).unwrap();
    let mut inside = 0;
    for i in 0..train.len() {
        let (x, t) = (train.inputs[2 * i], train.inputs[2 * i + 1]);
        assert!((-20.0..=20.0).contains(&x) && (0.0..=10.0).contains(&t));
        let u = fisher_travelling_wave(x, t, TRUE_R, TRUE_D);
        assert_eq!(train.truth.as_ref().unwrap()[i], u);
        if region.contains(x, t) {
            inside += 1;
            assert!((train.targets[i] - u).abs() <= 0.5);
        } else {
            assert_eq!(train.targets[i], u);
        }
    }
    assert!(inside > 50);
}

#[test]
fn fisher_whole_domain_mask_makes_every_point_noisy() {
    let region = NoiseRegion {
        x_lo: -20.0,
        x_hi: 20.0,
        t_lo: 0.0,
        t_hi: 10.0,
    };
    let (train, _) = gen_fisher_dataset(&fisher_cfg(Some(region), 300), 6).unwrap();
    assert!(train.noise_mag.as_ref().unwrap().iter().all(|&e| e > 0.0));
}

#[test]
fn fisher_subsamples_the_pool() {
    let cfg = DataConfig {
        n_pool: 500,
        n_train: 120,
        ..fisher_cfg(None, 120)
    };
    let (train, test) = gen_fisher_dataset(&cfg, 7).unwrap();
    assert_eq!((train.len(), test.len()), (120, 120));
}

#[test]
fn mask_outside_domain_is_invalid() {
    for r in [
        NoiseRegion { x_lo: -25.0, x_hi: 0.0, t_lo: 1.0, t_hi: 2.0 },
        NoiseRegion { x_lo: 0.0, x_hi: 1.0, t_lo: 5.0, t_hi: 11.0 },
        NoiseRegion { x_lo: 3.0, x_hi: 1.0, t_lo: 1.0, t_hi: 2.0 },
    ] {
        assert!(matches!(check_region(&r), Err(CliError::Config(_))));
        assert!(gen_fisher_dataset(&fisher_cfg(Some(r), 10), 0).is_err());
    }
}

fn write_record(dir: &Path, name: &str, rows: &[(f64, f64, f64)], header: &str) -> std::path::PathBuf {
    let mut text = format!("{header}\n");
    for (t, g, i) in rows {
        text.push_str(&format!("{t},{g},{i}\n"));
    }
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn rows20() -> Vec<(f64, f64, f64)> {
    (0..20)
        .map(|k| (k as f64 * 5.0, 280.0 - 9.0 * k as f64, 100.0 / (1.0 + k as f64) + 7.0))
        .collect()
}

const HEADER: &str = "t_min,glucose_mg_dl,insulin_muU_ml";

#[test]
fn ingest_well_formed_record() {
    let dir = tempfile::tempdir().unwrap();
    let rows = rows20();
    let p = write_record(dir.path(), "ok.csv", &rows, HEADER);
    let rec = ingest_bergman_csv(&p, None).unwrap();
    assert_eq!(rec.times.len(), 20);
    assert_eq!(rec.i_b, 0.5 * (rows[18].2 + rows[19].2));
    assert_eq!(rec.g_b, 0.5 * (rows[18].1 + rows[19].1));
    let rec = ingest_bergman_csv(&p, Some((85.0, 6.0))).unwrap();
    assert_eq!((rec.g_b, rec.i_b), (85.0, 6.0));

    // column order is free
    let swapped: Vec<_> = rows.iter().map(|&(t, g, i)| (i, t, g)).collect();
    let p = write_record(dir.path(), "swap.csv", &swapped, "insulin_muU_ml,t_min,glucose_mg_dl");
    assert_eq!(ingest_bergman_csv(&p, None).unwrap().times, rec.times);
}

#[test]
fn ingest_rejects_bad_records_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = rows20();
    rows.swap(6, 9);
    let p = write_record(dir.path(), "shuffled.csv", &rows, HEADER);
    let msg = ingest_bergman_csv(&p, None).unwrap_err().to_string();
    // rows 6..9 hold times 45, 35, 40, 30; the first drop is the data row after
    // the swapped-in 45 (file line 9)
    assert!(msg.contains("line 9") && msg.contains("does not increase"), "{msg}");

    let mut rows = rows20();
    rows[4].2 = 0.0;
    let p = write_record(dir.path(), "zero.csv", &rows, HEADER);
    let msg = ingest_bergman_csv(&p, None).unwrap_err().to_string();
    assert!(msg.contains("line 6") && msg.contains("positive"), "{msg}");

    let p = write_record(dir.path(), "cols.csv", &rows20(), "t_min,glucose_mg_dl,insulin");
    let msg = ingest_bergman_csv(&p, None).unwrap_err().to_string();
    assert!(msg.contains("insulin_muU_ml"), "{msg}");

    let p = dir.path().join("empty.csv");
    std::fs::write(&p, "").unwrap();
    assert!(matches!(ingest_bergman_csv(&p, None), Err(CliError::Config(_))));

    let p = write_record(dir.path(), "header_only.csv", &[], HEADER);
    assert!(matches!(ingest_bergman_csv(&p, None), Err(CliError::Config(_))));

    assert_eq!(
        ingest_bergman_csv(&dir.path().join("absent.csv"), None).unwrap_err().exit_code(),
        4
    );
}

#[test]
fn synthetic_record_follows_the_minimal_model() {
    let rec = synthetic_ivgtt().unwrap();
    assert_eq!(rec.times, IVGTT_TIMES.to_vec());
    assert_eq!((rec.g_b, rec.i_b), SYNTHETIC_BASALS);
    let (g, _) = solve_bergman(SYNTHETIC_BERGMAN_OMEGA, &rec, &rec.times).unwrap();
    for (a, b) in g.iter().zip(&rec.glucose) {
        assert!((a - b).abs() < 1e-9 * b);
    }
    assert_eq!(rec.glucose[0], 280.0);
    // glucose decays toward basal
    assert!(rec.glucose.last().unwrap() < &150.0);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ivgtt.csv");
    write_bergman_csv(&p, &rec).unwrap();
    let back = ingest_bergman_csv(&p, Some(SYNTHETIC_BASALS)).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn synthetic_bergman_train_and_test_are_independent_draws() {
    let cfg = ExperimentConfig::defaults(ProblemName::Bergman).unwrap().data;
    let (rec, train, test) = gen_bergman_dataset(&cfg, 11).unwrap();
    assert_eq!(train.inputs, test.inputs);
    assert_ne!(train.targets[1..], test.targets[1..]);
    assert_eq!(rec.glucose, train.targets);
    let truth = train.truth.as_ref().unwrap();
    for i in 0..train.len() {
        assert!((train.targets[i] - truth[i]).abs() <= 0.02 * truth[i] + 1e-12);
    }
}

#[test]
fn experiment_data_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::defaults(ProblemName::Poisson1d).unwrap();
    let (train, test) = gen_poisson_dataset(&base.data, 0).unwrap();
    write_dataset_csv(&dir.path().join("train.csv"), &train).unwrap();
    write_dataset_csv(&dir.path().join("test.csv"), &test).unwrap();
    let cfg = ExperimentConfig::from_toml_str(
        "[data]\nsource = \"file\"\ntrain_csv = \"train.csv\"\ntest_csv = \"test.csv\"\n",
        dir.path(),
    )
    .unwrap();
    let data = load_experiment_data(&cfg).unwrap();
    assert_eq!((data.train, data.test), (train.clone(), test));
    assert!(!data.meta.in_sample_test);

    let cfg = ExperimentConfig::from_toml_str("[data]\ntrain_csv = \"train.csv\"\n", dir.path()).unwrap();
    let data = load_experiment_data(&cfg).unwrap();
    assert_eq!(data.test, train);
    assert!(data.meta.in_sample_test);
}

#[test]
fn written_experiment_data_carries_meta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::defaults(ProblemName::Bergman).unwrap();
    let data = load_experiment_data(&cfg).unwrap();
    write_experiment_data(dir.path(), &data).unwrap();
    let meta: DataMeta = serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta, data.meta);
    let o = SYNTHETIC_BERGMAN_OMEGA;
    assert_eq!(meta.true_omega, Some(vec![o.0, o.1, o.2]));
    assert!(dir.path().join("ivgtt.csv").is_file());
    assert_eq!(read_dataset_csv(&dir.path().join("train.csv"), 1).unwrap(), data.train);
}
