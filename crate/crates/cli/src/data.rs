//! Synthetic datasets, dataset CSV files and IVGTT record ingestion.

use std::path::Path;

use epinn::dataset::Dataset;
use epinn::pde::{
    fisher_travelling_wave, interpolate_uniform, solve_bergman, solve_poisson, BergmanInputs, PdeProblem,
    SOLVER_NODES, TRUE_D, TRUE_R, TRUE_SIGMA_F2, TRUE_X0,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, DataSource, ExperimentConfig, NoiseRegion, ProblemName};
use crate::error::{CliError, CliResult};

/// Fisher-KPP sampling domain.
pub const FISHER_X: (f64, f64) = (-20.0, 20.0);
pub const FISHER_T: (f64, f64) = (0.0, 10.0);

/// Parameters of the synthetic IVGTT record `(p1, p2, p3)`.
pub const SYNTHETIC_BERGMAN_OMEGA: (f64, f64, f64) = (0.03, 0.02, 1.0e-5);
pub const SYNTHETIC_BASALS: (f64, f64) = (90.0, 8.0);
/// Frequently sampled IVGTT schedule in minutes.
pub const IVGTT_TIMES: [f64; 24] = [
    0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 19.0, 22.0, 27.0, 32.0, 42.0, 52.0, 62.0, 72.0, 82.0, 92.0,
    102.0, 122.0, 142.0, 162.0, 182.0,
];

pub const BERGMAN_HEADER: [&str; 3] = ["t_min", "glucose_mg_dl", "insulin_muU_ml"];

/// Rejects noise rectangles that are inverted or leave the sampling domain.
pub fn check_region(r: &NoiseRegion) -> CliResult<()> {
    let vals = [r.x_lo, r.x_hi, r.t_lo, r.t_hi];
    if vals.iter().any(|v| !v.is_finite()) || r.x_lo > r.x_hi || r.t_lo > r.t_hi {
        return Err(CliError::config(format!("noise region {vals:?} is not a valid rectangle")));
    }
    if r.x_lo < FISHER_X.0 || r.x_hi > FISHER_X.1 || r.t_lo < FISHER_T.0 || r.t_hi > FISHER_T.1 {
        return Err(CliError::config(format!(
            "noise region {vals:?} leaves the domain x in {FISHER_X:?}, t in {FISHER_T:?}"
        )));
    }
    Ok(())
}

fn with_truth(dim: usize, xs: Vec<f64>, ys: Vec<f64>, truth: Vec<f64>, noise: Vec<f64>) -> CliResult<Dataset> {
    Ok(Dataset::new(dim, xs, ys)?.with_truth(truth, noise)?)
}

/// Poisson data at the reference parameters: `n_train` points (the two
/// boundary points plus uniform interior draws) and `n_test` uniform draws, all
/// carrying `noise_amplitude * U(-0.5, 0.5)` noise except the boundary points.
pub fn gen_poisson_dataset(cfg: &DataConfig, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let fine = solve_poisson((TRUE_X0, TRUE_SIGMA_F2), SOLVER_NODES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = cfg.noise_amplitude;
    let mut draw = |n: usize, boundary: bool| {
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if boundary {
            xs[0] = 0.0;
            xs[1] = 1.0;
        }
        let mut ys = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        for &x in &xs {
            let u = interpolate_uniform(&fine, x);
            let e = if x > 0.0 && x < 1.0 { amp * (rng.random::<f64>() - 0.5) } else { 0.0 };
            ys.push(u + e);
            truth.push(u);
            noise.push(e.abs());
        }
        with_truth(1, xs, ys, truth, noise)
    };
    let train = draw(cfg.n_train, true)?;
    let test = draw(cfg.n_test, false)?;
    Ok((train, test))
}

/// Fisher-KPP data from the travelling wave at the reference parameters, with
/// `noise_amplitude * U(-0.5, 0.5)` noise inside the noise region only. The
/// training set is `n_train` points subsampled from a pool of `n_pool`.
pub fn gen_fisher_dataset(cfg: &DataConfig, seed: u64) -> CliResult<(Dataset, Dataset)> {
    if let Some(r) = &cfg.noise_region {
        check_region(r)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = cfg.noise_amplitude;
    let region = cfg.noise_region;
    let mut draw = |n: usize| {
        let mut xs = Vec::with_capacity(2 * n);
        let mut ys = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        for _ in 0..n {
            let x = FISHER_X.0 + (FISHER_X.1 - FISHER_X.0) * rng.random::<f64>();
            let t = FISHER_T.0 + (FISHER_T.1 - FISHER_T.0) * rng.random::<f64>();
            let u = fisher_travelling_wave(x, t, TRUE_R, TRUE_D);
            let e = match region {
                Some(r) if r.contains(x, t) => amp * (rng.random::<f64>() - 0.5),
                _ => 0.0,
            };
            xs.extend([x, t]);
            ys.push(u + e);
            truth.push(u);
            noise.push(e.abs());
        }
        with_truth(2, xs, ys, truth, noise)
    };
    let pool = draw(cfg.n_pool)?;
    let test = draw(cfg.n_test)?;
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(cfg.n_train);
    idx.sort_unstable();
    Ok((pool.subset(&idx)?, test))
}

fn synthetic_insulin(t: f64) -> f64 {
    SYNTHETIC_BASALS.1 + 100.0 * (-t / 5.0).exp() + 20.0 * (t / 30.0) * (1.0 - t / 30.0).exp()
}

/// Noiseless synthetic IVGTT record on [`IVGTT_TIMES`] from the minimal model at
/// [`SYNTHETIC_BERGMAN_OMEGA`], starting at 280 mg/dl.
pub fn synthetic_ivgtt() -> CliResult<BergmanInputs> {
    let times = IVGTT_TIMES.to_vec();
    let insulin: Vec<f64> = times.iter().map(|&t| synthetic_insulin(t)).collect();
    let mut glucose = vec![SYNTHETIC_BASALS.0; times.len()];
    glucose[0] = 280.0;
    let seedrec = BergmanInputs::new(times.clone(), glucose, insulin.clone(), Some(SYNTHETIC_BASALS))?;
    let (g, _) = solve_bergman(SYNTHETIC_BERGMAN_OMEGA, &seedrec, &times)?;
    Ok(BergmanInputs::new(times, g, insulin, Some(SYNTHETIC_BASALS))?)
}

/// Glucose observations of `record` with relative noise
/// `G * amplitude * U(-0.5, 0.5)`; the first sample stays exact.
fn noisy_glucose(record: &BergmanInputs, amplitude: f64, rng: &mut ChaCha8Rng) -> CliResult<Dataset> {
    let mut ys = Vec::with_capacity(record.times.len());
    let mut noise = Vec::with_capacity(record.times.len());
    for (k, &g) in record.glucose.iter().enumerate() {
        let e = if k == 0 { 0.0 } else { g * amplitude * (rng.random::<f64>() - 0.5) };
        ys.push(g + e);
        noise.push(e.abs());
    }
    with_truth(1, record.times.clone(), ys, record.glucose.clone(), noise)
}

/// Synthetic Bergman experiment: the record carries the noisy training glucose;
/// the test set is an independent noisy draw at the same times.
pub fn gen_bergman_dataset(cfg: &DataConfig, seed: u64) -> CliResult<(BergmanInputs, Dataset, Dataset)> {
    let clean = synthetic_ivgtt()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = noisy_glucose(&clean, cfg.noise_amplitude, &mut rng)?;
    let test = noisy_glucose(&clean, cfg.noise_amplitude, &mut rng)?;
    let basals = cfg.basals.unwrap_or(SYNTHETIC_BASALS);
    let record = BergmanInputs::new(clean.times.clone(), train.targets.clone(), clean.insulin.clone(), Some(basals))?;
    Ok((record, train, test))
}

/// Reads an IVGTT record with header `t_min,glucose_mg_dl,insulin_muU_ml`.
/// Basal levels default to the mean of the last two rows. Errors name the file
/// line (header is line 1).
pub fn ingest_bergman_csv(path: &Path, basals: Option<(f64, f64)>) -> CliResult<BergmanInputs> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(CliError::config(format!("{}: empty file", path.display())));
    }
    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(BERGMAN_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::config(format!("{}: missing column '{name}' in header", path.display()))
        })?;
    }
    let (mut times, mut glucose, mut insulin) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::config(format!("{}: line {line}: {e}", path.display())))?;
        let mut vals = [0.0f64; 3];
        for ((v, &c), name) in vals.iter_mut().zip(&cols).zip(BERGMAN_HEADER) {
            let field = rec.get(c).unwrap_or("");
            *v = field.parse().map_err(|_| {
                CliError::config(format!("{}: line {line}: {name} '{field}' is not a number", path.display()))
            })?;
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(CliError::config(format!("{}: line {line}: non-finite value", path.display())));
        }
        if let Some(&prev) = times.last() {
            if !(vals[0] > prev) {
                return Err(CliError::config(format!(
                    "{}: line {line}: time {} does not increase (previous {prev})",
                    path.display(),
                    vals[0]
                )));
            }
        }
        if !(vals[1] > 0.0 && vals[2] > 0.0) {
            return Err(CliError::config(format!(
                "{}: line {line}: glucose and insulin must be positive",
                path.display()
            )));
        }
        times.push(vals[0]);
        glucose.push(vals[1]);
        insulin.push(vals[2]);
    }
    if times.is_empty() {
        return Err(CliError::config(format!("{}: no data rows", path.display())));
    }
    BergmanInputs::new(times, glucose, insulin, basals)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn write_bergman_csv(path: &Path, record: &BergmanInputs) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BERGMAN_HEADER)?;
    for k in 0..record.times.len() {
        w.write_record([
            record.times[k].to_string(),
            record.glucose[k].to_string(),
            record.insulin[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn dataset_header(dim: usize) -> Vec<&'static str> {
    let mut h = if dim == 2 { vec!["x", "t"] } else { vec!["x"] };
    h.extend(["y", "truth", "noise_mag"]);
    h
}

/// Writes `x[,t],y,truth,noise_mag`; unknown truth or noise is left blank.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> CliResult<()> {
    if ds.input_dim > 2 {
        return Err(CliError::config("dataset CSV supports one or two input coordinates"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(dataset_header(ds.input_dim))?;
    let opt = |c: &Option<Vec<f64>>, i: usize| c.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.point(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.targets[i].to_string());
        row.push(opt(&ds.truth, i));
        row.push(opt(&ds.noise_mag, i));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV with `input_dim` leading coordinate columns.
pub fn read_dataset_csv(path: &Path, input_dim: usize) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let expect = dataset_header(input_dim);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(CliError::config(format!(
            "{}: header must be {}, found {}",
            path.display(),
            expect.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut xs, mut ys, mut truth, mut noise) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut has_truth, mut has_noise) = (true, true);
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::config(format!("{}: line {line}: {e}", path.display())))?;
        let num = |c: usize| -> CliResult<f64> {
            rec[c].parse().map_err(|_| {
                CliError::config(format!("{}: line {line}: '{}' is not a number", path.display(), &rec[c]))
            })
        };
        for c in 0..input_dim {
            xs.push(num(c)?);
        }
        ys.push(num(input_dim)?);
        for (c, has, col) in [(input_dim + 1, &mut has_truth, &mut truth), (input_dim + 2, &mut has_noise, &mut noise)] {
            if rec[c].is_empty() {
                *has = false;
            } else {
                col.push(num(c)?);
            }
        }
    }
    let mut ds = Dataset::new(input_dim, xs, ys).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if has_truth && truth.len() == ds.len() {
        ds.truth = Some(truth);
    }
    if has_noise && noise.len() == ds.len() {
        ds.noise_mag = Some(noise);
    }
    Ok(ds)
}

/// Side-car description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub problem: ProblemName,
    pub seed: u64,
    pub source: DataSource,
    pub noise_amplitude: f64,
    pub noise_region: Option<NoiseRegion>,
    pub true_omega: Option<Vec<f64>>,
    pub n_train: usize,
    pub n_test: usize,
    /// Test points are the training points (no independent test set).
    pub in_sample_test: bool,
}

/// Training and test data with the matching problem definition.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub problem: PdeProblem,
    pub train: Dataset,
    pub test: Dataset,
    pub meta: DataMeta,
}

fn build_problem(cfg: &ExperimentConfig, record: Option<BergmanInputs>) -> CliResult<PdeProblem> {
    let base = match (cfg.problem, record) {
        (ProblemName::Poisson1d, _) => PdeProblem::poisson(),
        (ProblemName::FisherKpp, _) => PdeProblem::fisher_kpp(),
        (ProblemName::Bergman, Some(r)) => PdeProblem::bergman(r),
        (ProblemName::Bergman, None) => return Err(CliError::config("bergman needs an IVGTT record")),
    };
    base.with_bounds(cfg.bounds.clone()).map_err(|e| CliError::config(format!("grid.bounds: {e}")))
}

/// Generates or loads the data described by `cfg`.
pub fn load_experiment_data(cfg: &ExperimentConfig) -> CliResult<ExperimentData> {
    let d = &cfg.data;
    let (problem, train, test, in_sample, true_omega) = match (&d.source, cfg.problem) {
        (DataSource::Generate, ProblemName::Poisson1d) => {
            let (tr, te) = gen_poisson_dataset(d, cfg.seed)?;
            (build_problem(cfg, None)?, tr, te, false, Some(vec![TRUE_X0, TRUE_SIGMA_F2]))
        }
        (DataSource::Generate, ProblemName::FisherKpp) => {
            let (tr, te) = gen_fisher_dataset(d, cfg.seed)?;
            (build_problem(cfg, None)?, tr, te, false, Some(vec![TRUE_R, TRUE_D]))
        }
        (DataSource::Generate, ProblemName::Bergman) => {
            let (rec, tr, te) = gen_bergman_dataset(d, cfg.seed)?;
            let o = SYNTHETIC_BERGMAN_OMEGA;
            (build_problem(cfg, Some(rec))?, tr, te, false, Some(vec![o.0, o.1, o.2]))
        }
        (DataSource::Files { .. }, ProblemName::Bergman) => {
            return Err(CliError::config("bergman data must come from data.bergman_csv or be generated"))
        }
        (DataSource::Files { train, test }, p) => {
            let tr = read_dataset_csv(train, p.input_dim())?;
            let (te, in_sample) = match test {
                Some(path) => (read_dataset_csv(path, p.input_dim())?, false),
                None => {
                    log::warn!("no test CSV given; calibration is measured on the training points");
                    (tr.clone(), true)
                }
            };
            (build_problem(cfg, None)?, tr, te, in_sample, None)
        }
        (DataSource::BergmanCsv { path }, _) => {
            let rec = ingest_bergman_csv(path, d.basals)?;
            let tr = Dataset::new(1, rec.times.clone(), rec.glucose.clone())?;
            log::warn!("clinical record has no independent test set; calibration is measured in-sample");
            (build_problem(cfg, Some(rec))?, tr.clone(), tr, true, None)
        }
    };
    let meta = DataMeta {
        problem: cfg.problem,
        seed: cfg.seed,
        source: d.source.clone(),
        noise_amplitude: d.noise_amplitude,
        noise_region: d.noise_region,
        true_omega,
        n_train: train.len(),
        n_test: test.len(),
        in_sample_test: in_sample,
    };
    Ok(ExperimentData {
        problem,
        train,
        test,
        meta,
    })
}

/// Writes `train.csv`, `test.csv`, `meta.json` (and `ivgtt.csv` for Bergman) into `dir`.
pub fn write_experiment_data(dir: &Path, data: &ExperimentData) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    write_dataset_csv(&dir.join("train.csv"), &data.train)?;
    write_dataset_csv(&dir.join("test.csv"), &data.test)?;
    if let Some(rec) = data.problem.bergman_inputs() {
        write_bergman_csv(&dir.join("ivgtt.csv"), rec)?;
    }
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&data.meta)? + "\n")?;
    Ok(())
}
