//! End-to-end runs: E-PINN and the deep-ensemble baseline, with report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use epinn::dataset::Dataset;
use epinn::ensemble::{run_ensemble, EnsembleResult};
use epinn::evidential::{predictive_interval, predictive_variance, EvidentialOutput};
use epinn::inference::{gof_pvalue, posterior_for_model, sample_posterior, GofReport, PosteriorTable};
use epinn::metrics::{ecp_curve, ecp_curve_with, spearman, CalibrationReport};
use epinn::model::EPinnModel;
use epinn::pde::{bergman_index, PdeProblem};
use epinn::priorbuild::{build_priors, OmegaGrid, OmegaPrior, PhaseOneView, ResidualWeightPrior};
use epinn::trainer::{phase1_train, phase2_train, Collocation, LogRow, Phase2Context, TrainState};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{ExperimentConfig, ProblemName};
use crate::data::{load_experiment_data, write_experiment_data, ExperimentData, FISHER_T, FISHER_X};
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Interval levels written to `predictions.csv`.
pub const PREDICTION_LEVELS: [(f64, &str); 2] = [(0.68, "68"), (0.95, "95")];
const INDEX_SEED_SALT: u64 = 0x1d3e_5a11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSummary {
    pub mean: Vec<f64>,
    /// Posterior argmax node; absent for the ensemble.
    pub mode: Option<Vec<f64>>,
    pub std: Vec<f64>,
    /// E-PINN: marginal 16/84% quantiles. Ensemble: mean ± std.
    pub ci68: Vec<(f64, f64)>,
    /// Ensemble only: 16th and 84th percentiles of the member estimates.
    pub ci68_percentile: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub alpha_r: f64,
    pub beta_r: f64,
    pub sigma2_ini: f64,
    pub sigma2_asy: f64,
}

impl PriorSummary {
    fn new(o: &OmegaPrior, r: &ResidualWeightPrior) -> Self {
        PriorSummary {
            mu: o.mu.clone(),
            sigma2: o.sigma2.clone(),
            alpha_r: r.alpha_r,
            beta_r: r.beta_r,
            sigma2_ini: r.sigma2_ini,
            sigma2_asy: r.sigma2_asy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSummary {
    pub r_s: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub p16: f64,
    pub p84: f64,
}

/// Glucose effectiveness `S_G = p1` and insulin sensitivity `S_I = p3 / p2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BergmanIndices {
    pub s_g: SampleStats,
    pub s_i: SampleStats,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCounts {
    pub n_train: usize,
    pub n_test: usize,
    pub in_sample_test: bool,
    pub noise_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub final_data_nll: Option<f64>,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_members: usize,
    pub n_failed: usize,
    pub lambda_res: f64,
    pub epochs: usize,
    pub member_seeds: Vec<u64>,
    pub member_omegas: Vec<Vec<f64>>,
}

/// Wall-clock seconds per stage; the only non-deterministic part of a summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Runtime {
    pub stages: BTreeMap<String, f64>,
    pub total_s: f64,
}

/// Contents of `summary.json`; shared by the E-PINN and ensemble runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub method: String,
    pub problem: ProblemName,
    pub seed: u64,
    pub param_names: Vec<String>,
    pub true_omega: Option<Vec<f64>>,
    pub omega: OmegaSummary,
    pub priors: Option<PriorSummary>,
    pub sigma2_r: Option<f64>,
    pub gof: Option<GofReport>,
    pub calibration: CalibrationReport,
    pub spearman: Option<SpearmanSummary>,
    pub bergman: Option<BergmanIndices>,
    pub data: DataCounts,
    pub training: TrainingSummary,
    pub ensemble: Option<EnsembleSummary>,
    pub runtime: Runtime,
}

impl Summary {
    /// JSON with the `runtime` section removed.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("summary serializes");
        strip_wall_clock(&mut v);
        serde_json::to_string_pretty(&v).expect("summary serializes")
    }
}

pub fn strip_wall_clock(v: &mut serde_json::Value) {
    if let Some(obj) = v.as_object_mut() {
        obj.remove("runtime");
    }
}

/// Everything a finished E-PINN run produced in memory.
#[derive(Debug, Clone)]
pub struct EpinnRun {
    pub summary: Summary,
    pub model: EPinnModel,
    pub posterior: PosteriorTable,
    pub log: Vec<LogRow>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub summary: Summary,
    pub result: EnsembleResult,
    pub output_dir: PathBuf,
}

struct Clock {
    start: Instant,
    last: Instant,
    runtime: Runtime,
    /// Stage currently running, reported on failure.
    current: &'static str,
}

impl Clock {
    fn new() -> Self {
        let now = Instant::now();
        Clock {
            start: now,
            last: now,
            runtime: Runtime::default(),
            current: "data",
        }
    }

    /// Closes the running stage and opens `next`.
    fn lap(&mut self, next: &'static str) {
        let stage = std::mem::replace(&mut self.current, next);
        let now = Instant::now();
        self.runtime
            .stages
            .insert(stage.to_string(), now.duration_since(self.last).as_secs_f64());
        self.last = now;
        log::info!("{stage} done after {:.1} s", now.duration_since(self.start).as_secs_f64());
    }

    fn finish(&mut self) -> Runtime {
        self.runtime.total_s = self.start.elapsed().as_secs_f64();
        std::mem::take(&mut self.runtime)
    }
}

/// Regular evaluation grid over the problem's input domain.
pub fn domain_grid(problem: &PdeProblem, name: ProblemName, points_per_dim: usize) -> Vec<f64> {
    let lin = |lo: f64, hi: f64| -> Vec<f64> {
        (0..points_per_dim)
            .map(|k| lo + (hi - lo) * k as f64 / (points_per_dim - 1) as f64)
            .collect()
    };
    match name {
        ProblemName::Poisson1d => lin(0.0, 1.0),
        ProblemName::FisherKpp => {
            let (xs, ts) = (lin(FISHER_X.0, FISHER_X.1), lin(FISHER_T.0, FISHER_T.1));
            xs.iter().flat_map(|&x| ts.iter().flat_map(move |&t| [x, t])).collect()
        }
        ProblemName::Bergman => {
            let rec = problem.bergman_inputs().expect("bergman problem carries its record");
            lin(rec.t_start(), rec.t_end())
        }
    }
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn write_log_csv(path: &Path, log: &[LogRow], n_params: usize) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["phase", "epoch", "data_nll", "residual_term", "sigma2_r"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n_params).map(|j| format!("omega_{j}")));
    w.write_record(&header)?;
    for r in log {
        let mut row = vec![
            r.phase.to_string(),
            r.epoch.to_string(),
            fmt_opt(r.data_nll),
            fmt_opt(r.residual_term),
            fmt_opt(r.sigma2_r),
        ];
        row.extend((0..n_params).map(|j| r.omega.get(j).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_posterior_csv(path: &Path, post: &PosteriorTable, names: &[&str]) -> CliResult<()> {
    let grid = post.grid();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = names.to_vec();
    header.push("density");
    w.write_record(&header)?;
    for (flat, p) in post.prob().iter().enumerate() {
        let mut row: Vec<String> = grid.node(flat).iter().map(|v| v.to_string()).collect();
        row.push(p.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `x[,t],gamma,sigma_p,lo68,hi68,lo95,hi95`.
fn write_predictions_csv(
    path: &Path,
    dim: usize,
    points: &[f64],
    mean: &[f64],
    sigma: &[f64],
    mut interval: impl FnMut(usize, f64) -> CliResult<(f64, f64)>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = if dim == 2 { vec!["x".into(), "t".into()] } else { vec!["x".into()] };
    header.extend(["gamma".into(), "sigma_p".into()]);
    for (_, tag) in PREDICTION_LEVELS {
        header.extend([format!("lo{tag}"), format!("hi{tag}")]);
    }
    w.write_record(&header)?;
    for i in 0..mean.len() {
        let mut row: Vec<String> = points[i * dim..(i + 1) * dim].iter().map(|v| v.to_string()).collect();
        row.extend([mean[i].to_string(), sigma[i].to_string()]);
        for (q, _) in PREDICTION_LEVELS {
            let (lo, hi) = interval(i, q)?;
            row.extend([lo.to_string(), hi.to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

pub fn sample_stats(values: &[f64]) -> SampleStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    SampleStats {
        mean,
        std: var.sqrt(),
        median: percentile(&s, 0.5),
        p16: percentile(&s, 0.16),
        p84: percentile(&s, 0.84),
    }
}

/// Posterior summaries of the Bergman indices from jittered posterior draws.
pub fn bergman_indices(post: &PosteriorTable, n: usize, seed: u64) -> CliResult<BergmanIndices> {
    let draws = sample_posterior(post, n, seed ^ INDEX_SEED_SALT, true);
    let mut sg = Vec::with_capacity(n);
    let mut si = Vec::with_capacity(n);
    for w in &draws {
        let (g, i) = bergman_index((w[0], w[1], w[2])).map_err(|e| CliError::at("bergman-indices", e))?;
        sg.push(g);
        si.push(i);
    }
    Ok(BergmanIndices {
        s_g: sample_stats(&sg),
        s_i: sample_stats(&si),
        n_samples: n,
    })
}

pub fn sigma_p(outputs: &[EvidentialOutput]) -> CliResult<Vec<f64>> {
    outputs
        .iter()
        .map(|o| predictive_variance(o).map(f64::sqrt).map_err(|e| CliError::at("calibration", e)))
        .collect()
}

/// Spearman correlation between predicted spread and injected noise, when the
/// data carry a noise mask and noise magnitudes.
pub fn noise_spearman(cfg: &ExperimentConfig, train: &Dataset, spread: &[f64]) -> CliResult<Option<SpearmanSummary>> {
    let (Some(_), Some(noise)) = (cfg.data.noise_region, train.noise_mag.as_ref()) else {
        return Ok(None);
    };
    let (r_s, p_value) = spearman(spread, noise).map_err(|e| CliError::at("spearman", e))?;
    Ok(Some(SpearmanSummary {
        r_s,
        p_value,
        n: spread.len(),
    }))
}

pub fn posterior_omega_summary(post: &PosteriorTable) -> OmegaSummary {
    OmegaSummary {
        mean: post.mean.clone(),
        mode: Some(post.mode.clone()),
        std: post.std(),
        ci68: post.ci68.clone(),
        ci68_percentile: None,
    }
}

pub fn collocation_points<'a>(cfg: &'a ExperimentConfig, train: &'a Dataset) -> &'a [f64] {
    match &cfg.train.collocation {
        Collocation::TrainingInputs => &train.inputs,
        Collocation::Points(p) => p,
    }
}

fn prepare_output(cfg: &ExperimentConfig) -> CliResult<ExperimentData> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let data = load_experiment_data(cfg)?;
    write_experiment_data(&cfg.output_dir.join("data"), &data)?;
    Ok(data)
}

/// Records a failed stage next to whatever artifacts were already written.
fn record_failure<T>(dir: &Path, clock: &Clock, res: CliResult<T>) -> CliResult<T> {
    if let Err(e) = &res {
        let stage = match e {
            CliError::Numerical { stage: Some(s), .. } => s,
            _ => clock.current,
        };
        log::error!("stage {stage} failed; partial artifacts are in {}", dir.display());
        let body = serde_json::json!({ "stage": stage, "error": e.to_string() });
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("failure.json"), body.to_string() + "\n");
        }
    }
    res
}

/// Two-phase E-PINN run. Writes into `cfg.output_dir`: `config.json`, `data/`,
/// `checkpoint_phase1.epinn`, `checkpoint.epinn`, `train_log.csv`,
/// `posterior.csv`, `predictions.csv` and `summary.json`. On failure the
/// artifacts of completed stages stay behind together with `failure.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<EpinnRun> {
    cfg.validate()?;
    let mut clock = Clock::new();
    let res = run_experiment_inner(cfg, &mut clock);
    record_failure(&cfg.output_dir, &clock, res)
}

fn run_experiment_inner(cfg: &ExperimentConfig, clock: &mut Clock) -> CliResult<EpinnRun> {
    let out = &cfg.output_dir;
    let data = prepare_output(cfg)?;
    let problem = &data.problem;
    let (train, test) = (&data.train, &data.test);
    let names = problem.param_names();
    clock.lap("phase1");

    let model = EPinnModel::new(problem, &cfg.train.hidden, train, cfg.seed).map_err(|e| CliError::at("init", e))?;
    let (model, log1) = phase1_train(model, train, &cfg.train).map_err(|e| CliError::at("phase1", e))?;
    let mut ckpt = Checkpoint::phase1(cfg.problem, &model, cfg.seed, cfg.train.phase1_epochs, &cfg.bounds);
    ckpt.bergman_record = problem.bergman_inputs().cloned();
    save_checkpoint(&out.join("checkpoint_phase1.epinn"), &ckpt)?;
    write_log_csv(&out.join("train_log.csv"), &log1, names.len())?;
    clock.lap("priors");

    let colloc = collocation_points(cfg, train);
    let grid = OmegaGrid::new(problem.param_bounds(), cfg.points_per_dim).map_err(|e| CliError::at("priors", e))?;
    let gamma = model.predict_mean(&train.inputs).map_err(|e| CliError::at("priors", e))?;
    let fields = model.field_jets(colloc).map_err(|e| CliError::at("priors", e))?;
    let view = PhaseOneView {
        data_inputs: &train.inputs,
        gamma: &gamma,
        colloc,
        fields: &fields,
    };
    let priors = build_priors(&view, problem, &grid).map_err(|e| CliError::at("priors", e))?;
    clock.lap("phase2");

    let state = TrainState::new(model, &priors.omega_prior, &priors.residual_prior, cfg.train.phase2_lr);
    let ctx = Phase2Context {
        data: train,
        problem,
        omega_prior: &priors.omega_prior,
        residual_prior: &priors.residual_prior,
        colloc: match cfg.train.collocation {
            Collocation::TrainingInputs => None,
            Collocation::Points(_) => Some(colloc),
        },
        disable_residual: cfg.train.disable_residual,
    };
    let (state, log2) = phase2_train(state, &ctx, &cfg.train).map_err(|e| CliError::at("phase2", e))?;
    let log: Vec<LogRow> = log1.into_iter().chain(log2).collect();
    write_log_csv(&out.join("train_log.csv"), &log, names.len())?;
    let ckpt = Checkpoint {
        phase: 2,
        epoch: state.epoch,
        params: state.model.mlp.params(),
        log_sigma2_r: Some(state.log_sigma2_r),
        omega: Some(state.omega.clone()),
        omega_prior: Some(priors.omega_prior.clone()),
        residual_prior: Some(priors.residual_prior),
        ..ckpt
    };
    save_checkpoint(&out.join("checkpoint.epinn"), &ckpt)?;
    clock.lap("posterior");

    let model = state.model;
    let sigma2_r = ckpt.sigma2_r().expect("phase-2 checkpoint has sigma2_R");
    let (post, _) = posterior_for_model(&model, problem, &grid, sigma2_r, &priors.omega_prior, colloc)
        .map_err(|e| CliError::at("posterior", e))?;
    write_posterior_csv(&out.join("posterior.csv"), &post, names)?;
    clock.lap("gof");

    let eval = domain_grid(problem, cfg.problem, cfg.evaluation.gof_points_per_dim);
    let eval_mean = model.predict_mean(&eval).map_err(|e| CliError::at("gof", e))?;
    let gof = gof_pvalue(&post, &eval_mean, problem, &eval, cfg.evaluation.gof_samples, cfg.seed)
        .map_err(|e| CliError::at("gof", e))?;
    clock.lap("metrics");

    let eval_out = model.predict(&eval).map_err(|e| CliError::at("calibration", e))?;
    write_predictions_csv(
        &out.join("predictions.csv"),
        problem.input_dim(),
        &eval,
        &eval_mean,
        &sigma_p(&eval_out)?,
        |i, q| predictive_interval(&eval_out[i], q).map_err(|e| CliError::at("calibration", e)),
    )?;
    let test_out = model.predict(&test.inputs).map_err(|e| CliError::at("calibration", e))?;
    let calibration =
        ecp_curve(&test_out, &test.targets, &cfg.evaluation.levels).map_err(|e| CliError::at("calibration", e))?;
    let train_out = model.predict(&train.inputs).map_err(|e| CliError::at("spearman", e))?;
    let spearman = noise_spearman(cfg, train, &sigma_p(&train_out)?)?;
    let bergman = match cfg.problem {
        ProblemName::Bergman => Some(bergman_indices(&post, cfg.evaluation.gof_samples, cfg.seed)?),
        _ => None,
    };
    clock.lap("report");

    let mut summary = Summary {
        schema_version: SCHEMA_VERSION,
        method: "e-pinn".into(),
        problem: cfg.problem,
        seed: cfg.seed,
        param_names: names.iter().map(|s| s.to_string()).collect(),
        true_omega: data.meta.true_omega.clone(),
        omega: posterior_omega_summary(&post),
        priors: Some(PriorSummary::new(&priors.omega_prior, &priors.residual_prior)),
        sigma2_r: Some(sigma2_r),
        gof: Some(gof),
        calibration,
        spearman,
        bergman,
        data: counts(&data),
        training: TrainingSummary {
            phase1_epochs: cfg.train.phase1_epochs,
            phase2_epochs: cfg.train.phase2_epochs,
            final_data_nll: log.last().map(|r| r.data_nll),
            hidden: cfg.train.hidden.clone(),
        },
        ensemble: None,
        runtime: Runtime::default(),
    };
    summary.runtime = clock.finish();
    write_json(&out.join("summary.json"), &summary)?;
    Ok(EpinnRun {
        summary,
        model,
        posterior: post,
        log,
        output_dir: out.clone(),
    })
}

fn counts(data: &ExperimentData) -> DataCounts {
    DataCounts {
        n_train: data.train.len(),
        n_test: data.test.len(),
        in_sample_test: data.meta.in_sample_test,
        noise_amplitude: data.meta.noise_amplitude,
    }
}

/// Deep-ensemble baseline on the same data, written with the same file layout
/// (`predictions.csv`, `summary.json`, plus `members.csv`).
pub fn run_ensemble_experiment(cfg: &ExperimentConfig) -> CliResult<EnsembleRun> {
    cfg.validate()?;
    let mut clock = Clock::new();
    let res = run_ensemble_inner(cfg, &mut clock);
    record_failure(&cfg.output_dir, &clock, res)
}

fn run_ensemble_inner(cfg: &ExperimentConfig, clock: &mut Clock) -> CliResult<EnsembleRun> {
    let out = &cfg.output_dir;
    let data = prepare_output(cfg)?;
    let problem = &data.problem;
    let (train, test) = (&data.train, &data.test);
    let names = problem.param_names();
    let dim = problem.input_dim();
    clock.lap("ensemble");

    let grid_pts = domain_grid(problem, cfg.problem, cfg.evaluation.gof_points_per_dim);
    let with_train = cfg.data.noise_region.is_some() && train.noise_mag.is_some();
    let mut eval = test.inputs.clone();
    eval.extend_from_slice(&grid_pts);
    if with_train {
        eval.extend_from_slice(&train.inputs);
    }
    let (n_test, n_grid) = (test.len(), grid_pts.len() / dim);
    let mut ens_cfg = cfg.ensemble.clone();
    ens_cfg.collocation = cfg.train.collocation.clone();
    let result = run_ensemble(problem, train, &eval, &ens_cfg).map_err(|e| CliError::at("ensemble", e))?;
    clock.lap("metrics");

    let mut w = csv::Writer::from_path(out.join("members.csv"))?;
    let mut header = vec!["seed".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (s, om) in result.member_seeds.iter().zip(&result.member_omegas) {
        let mut row = vec![s.to_string()];
        row.extend(om.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let interval = |i: usize, q: f64| result.interval(i, q).map_err(|e| CliError::at("calibration", e));
    write_predictions_csv(
        &out.join("predictions.csv"),
        dim,
        &grid_pts,
        &result.predictive_mean[n_test..n_test + n_grid],
        &result.predictive_std[n_test..n_test + n_grid],
        |i, q| interval(n_test + i, q),
    )?;
    let calibration = ecp_curve_with(&test.targets, &cfg.evaluation.levels, |i, q| result.interval(i, q))
        .map_err(|e| CliError::at("calibration", e))?;
    let spearman = if with_train {
        noise_spearman(cfg, train, &result.predictive_std[n_test + n_grid..])?
    } else {
        None
    };
    clock.lap("report");

    let omega = OmegaSummary {
        mean: result.omega_mean.clone(),
        mode: None,
        std: result.omega_std.clone(),
        ci68: result
            .omega_mean
            .iter()
            .zip(&result.omega_std)
            .map(|(m, s)| (m - s, m + s))
            .collect(),
        ci68_percentile: Some(result.omega_p16_p84.clone()),
    };
    let mut summary = Summary {
        schema_version: SCHEMA_VERSION,
        method: "deep-ensemble".into(),
        problem: cfg.problem,
        seed: cfg.seed,
        param_names: names.iter().map(|s| s.to_string()).collect(),
        true_omega: data.meta.true_omega.clone(),
        omega,
        priors: None,
        sigma2_r: None,
        gof: None,
        calibration,
        spearman,
        bergman: None,
        data: counts(&data),
        training: TrainingSummary {
            phase1_epochs: 0,
            phase2_epochs: ens_cfg.epochs,
            final_data_nll: None,
            hidden: ens_cfg.hidden.clone(),
        },
        ensemble: Some(EnsembleSummary {
            n_members: result.n_members(),
            n_failed: result.n_failed,
            lambda_res: ens_cfg.lambda_res,
            epochs: ens_cfg.epochs,
            member_seeds: result.member_seeds.clone(),
            member_omegas: result.member_omegas.clone(),
        }),
        runtime: Runtime::default(),
    };
    summary.runtime = clock.finish();
    write_json(&out.join("summary.json"), &summary)?;
    Ok(EnsembleRun {
        summary,
        result,
        output_dir: out.clone(),
    })
}

fn checkpoint_for(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> CliResult<(EPinnModel, ExperimentData)> {
    if ckpt.problem != cfg.problem {
        return Err(CliError::config(format!(
            "checkpoint is for {}, config for {}",
            ckpt.problem.as_str(),
            cfg.problem.as_str()
        )));
    }
    let mut data = load_experiment_data(cfg)?;
    if let Some(rec) = &ckpt.bergman_record {
        data.problem = PdeProblem::bergman(rec.clone())
            .with_bounds(ckpt.param_bounds.clone())
            .map_err(|e| CliError::config(format!("checkpoint bounds: {e}")))?;
    }
    Ok((ckpt.model()?, data))
}

/// Posterior of a phase-2 checkpoint over the configured grid; writes `posterior.csv`.
pub fn posterior_from_checkpoint(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> CliResult<OmegaSummary> {
    let (Some(sigma2_r), Some(prior)) = (ckpt.sigma2_r(), ckpt.omega_prior.as_ref()) else {
        return Err(CliError::config("posterior needs a phase-2 checkpoint"));
    };
    let (model, data) = checkpoint_for(cfg, ckpt)?;
    let grid = OmegaGrid::new(data.problem.param_bounds(), cfg.points_per_dim).map_err(|e| CliError::at("posterior", e))?;
    let colloc = collocation_points(cfg, &data.train);
    let (post, _) = posterior_for_model(&model, &data.problem, &grid, sigma2_r, prior, colloc)
        .map_err(|e| CliError::at("posterior", e))?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_posterior_csv(&cfg.output_dir.join("posterior.csv"), &post, data.problem.param_names())?;
    Ok(posterior_omega_summary(&post))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub calibration: CalibrationReport,
    pub spearman: Option<SpearmanSummary>,
}

/// Calibration of a checkpoint on the configured test data.
pub fn metrics_from_checkpoint(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> CliResult<MetricsReport> {
    let (model, data) = checkpoint_for(cfg, ckpt)?;
    let test_out = model.predict(&data.test.inputs).map_err(|e| CliError::at("calibration", e))?;
    let calibration =
        ecp_curve(&test_out, &data.test.targets, &cfg.evaluation.levels).map_err(|e| CliError::at("calibration", e))?;
    let train_out = model.predict(&data.train.inputs).map_err(|e| CliError::at("spearman", e))?;
    let spearman = noise_spearman(cfg, &data.train, &sigma_p(&train_out)?)?;
    Ok(MetricsReport { calibration, spearman })
}
