//! Experiment configuration: a TOML file with `[experiment]`, `[data]`, `[grid]`,
//! `[train]`, `[evaluation]` and `[ensemble]` sections. Every key is optional;
//! missing keys take problem-specific defaults. Relative paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use epinn::ensemble::EnsembleConfig;
use epinn::pde::{PdeProblem, BERGMAN_DEFAULT_BOUNDS};
use epinn::trainer::{Collocation, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "EPINN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemName {
    Poisson1d,
    FisherKpp,
    Bergman,
}

impl ProblemName {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "poisson1d" => Ok(ProblemName::Poisson1d),
            "fisher-kpp" => Ok(ProblemName::FisherKpp),
            "bergman" => Ok(ProblemName::Bergman),
            other => Err(CliError::config(format!(
                "unknown problem '{other}' (expected poisson1d, fisher-kpp or bergman)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemName::Poisson1d => "poisson1d",
            ProblemName::FisherKpp => "fisher-kpp",
            ProblemName::Bergman => "bergman",
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            ProblemName::FisherKpp => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    evaluation: RawEvaluation,
    #[serde(default)]
    ensemble: RawEnsemble,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    problem: Option<String>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<String>,
    train_csv: Option<PathBuf>,
    test_csv: Option<PathBuf>,
    bergman_csv: Option<PathBuf>,
    basal_glucose: Option<f64>,
    basal_insulin: Option<f64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    n_pool: Option<usize>,
    noise_amplitude: Option<f64>,
    noise_region: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    points_per_dim: Option<usize>,
    bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCollocation {
    Named(String),
    Points(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    phase1_epochs: Option<usize>,
    phase2_epochs: Option<usize>,
    phase1_lr: Option<f64>,
    phase2_lr: Option<f64>,
    hidden: Option<Vec<usize>>,
    collocation: Option<RawCollocation>,
    log_every: Option<usize>,
    plateau_stop: Option<bool>,
    convergence_window: Option<usize>,
    convergence_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluation {
    gof_samples: Option<usize>,
    gof_points_per_dim: Option<usize>,
    levels: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    n_members: Option<usize>,
    lambda_res: Option<f64>,
    epochs: Option<usize>,
    warmup_epochs: Option<usize>,
    omega_fit_epochs: Option<usize>,
    lr: Option<f64>,
    hidden: Option<Vec<usize>>,
}

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Synthetic data from the known solution (Bergman: a synthetic IVGTT record).
    Generate,
    /// Dataset CSVs in the `x[,t],y,truth,noise_mag` schema.
    Files { train: PathBuf, test: Option<PathBuf> },
    /// A clinical-style IVGTT record `t_min,glucose_mg_dl,insulin_muU_ml`.
    BergmanCsv { path: PathBuf },
}

/// Axis-aligned noise rectangle `x_lo < x < x_hi`, `t_lo < t < t_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRegion {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl NoiseRegion {
    pub fn contains(&self, x: f64, t: f64) -> bool {
        x > self.x_lo && x < self.x_hi && t > self.t_lo && t < self.t_hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_train: usize,
    pub n_test: usize,
    /// Candidate training points drawn before subsampling `n_train` of them.
    pub n_pool: usize,
    /// Multiplier of the `U(-0.5, 0.5)` noise.
    pub noise_amplitude: f64,
    pub noise_region: Option<NoiseRegion>,
    pub basals: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub gof_samples: usize,
    pub gof_points_per_dim: usize,
    pub levels: Vec<f64>,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemName,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub points_per_dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub ensemble: EnsembleConfig,
}

fn poisson_noise_default() -> f64 {
    let fine = epinn::pde::solve_poisson((epinn::pde::TRUE_X0, epinn::pde::TRUE_SIGMA_F2), epinn::pde::SOLVER_NODES)
        .expect("reference Poisson solve");
    0.1 * fine.iter().cloned().fold(0.0, f64::max)
}

fn resolve_path(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Reads and resolves `path`, then applies the `EPINN_SEED` override.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut cfg = Self::from_toml_str(&text, base)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.set_seed(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?,
            );
        }
        Ok(cfg)
    }

    /// Parses config text; relative paths are taken relative to `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> CliResult<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        Self::resolve(raw, base)
    }

    /// Defaults for `problem` with everything else unset.
    pub fn defaults(problem: ProblemName) -> CliResult<Self> {
        let raw = RawConfig {
            experiment: RawExperiment {
                problem: Some(problem.as_str().to_string()),
                ..RawExperiment::default()
            },
            ..RawConfig::default()
        };
        Self::resolve(raw, Path::new("."))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.ensemble.seed = seed;
    }

    fn resolve(raw: RawConfig, base: &Path) -> CliResult<Self> {
        let problem = ProblemName::parse(raw.experiment.problem.as_deref().unwrap_or("poisson1d"))?;
        let seed = raw.experiment.seed.unwrap_or(0);
        let output_dir = resolve_path(
            base,
            raw.experiment
                .output_dir
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}", problem.as_str()))),
        );

        let d = raw.data;
        let source = match d.source.as_deref().unwrap_or(if d.bergman_csv.is_some() {
            "bergman-csv"
        } else if d.train_csv.is_some() {
            "file"
        } else {
            "generate"
        }) {
            "generate" => DataSource::Generate,
            "file" => DataSource::Files {
                train: resolve_path(
                    base,
                    d.train_csv.clone().ok_or_else(|| CliError::config("data.source = \"file\" needs data.train_csv"))?,
                ),
                test: d.test_csv.clone().map(|p| resolve_path(base, p)),
            },
            "bergman-csv" => {
                if problem != ProblemName::Bergman {
                    return Err(CliError::config("data.bergman_csv only applies to the bergman problem"));
                }
                DataSource::BergmanCsv {
                    path: resolve_path(
                        base,
                        d.bergman_csv.clone().ok_or_else(|| CliError::config("data.source = \"bergman-csv\" needs data.bergman_csv"))?,
                    ),
                }
            }
            other => {
                return Err(CliError::config(format!(
                    "data.source must be generate, file or bergman-csv, got '{other}'"
                )))
            }
        };
        let (n_train, n_test, n_pool, noise, region) = match problem {
            ProblemName::Poisson1d => (240, 150, 240, poisson_noise_default(), None),
            ProblemName::FisherKpp => (
                1000,
                4000,
                5000,
                1.0,
                Some(NoiseRegion {
                    x_lo: -10.0,
                    x_hi: 10.0,
                    t_lo: 2.0,
                    t_hi: 8.0,
                }),
            ),
            ProblemName::Bergman => (0, 0, 0, 0.04, None),
        };
        let noise_region = match d.noise_region {
            None => region,
            Some(v) if v.is_empty() => None,
            Some(v) if v.len() == 4 => Some(NoiseRegion {
                x_lo: v[0],
                x_hi: v[1],
                t_lo: v[2],
                t_hi: v[3],
            }),
            Some(v) => {
                return Err(CliError::config(format!(
                    "data.noise_region needs [x_lo, x_hi, t_lo, t_hi] or [], got {} values",
                    v.len()
                )))
            }
        };
        let basals = match (d.basal_glucose, d.basal_insulin) {
            (None, None) => None,
            (Some(g), Some(i)) => Some((g, i)),
            _ => return Err(CliError::config("set both data.basal_glucose and data.basal_insulin, or neither")),
        };
        let n_train = d.n_train.unwrap_or(n_train);
        let data = DataConfig {
            source,
            n_train,
            n_test: d.n_test.unwrap_or(n_test),
            n_pool: d.n_pool.unwrap_or(n_pool.max(n_train)),
            noise_amplitude: d.noise_amplitude.unwrap_or(noise),
            noise_region,
            basals,
        };

        let default_bounds: Vec<(f64, f64)> = match problem {
            ProblemName::Poisson1d => PdeProblem::poisson().param_bounds().to_vec(),
            ProblemName::FisherKpp => PdeProblem::fisher_kpp().param_bounds().to_vec(),
            ProblemName::Bergman => BERGMAN_DEFAULT_BOUNDS.to_vec(),
        };
        let bounds = raw
            .grid
            .bounds
            .map(|b| b.into_iter().map(|[lo, hi]| (lo, hi)).collect())
            .unwrap_or(default_bounds);
        let points_per_dim = raw.grid.points_per_dim.unwrap_or(match problem {
            ProblemName::Poisson1d => 51,
            ProblemName::FisherKpp => 26,
            ProblemName::Bergman => 21,
        });

        let t = raw.train;
        let (e1, lr1, e2, lr2) = match problem {
            ProblemName::Poisson1d => (50_000, 1e-4, 50_000, 5e-4),
            _ => (30_000, 1e-3, 30_000, 3e-4),
        };
        let base_train = TrainConfig::default();
        let collocation = match t.collocation {
            None => Collocation::TrainingInputs,
            Some(RawCollocation::Named(s)) if s == "training-inputs" => Collocation::TrainingInputs,
            Some(RawCollocation::Named(s)) => {
                return Err(CliError::config(format!(
                    "train.collocation must be \"training-inputs\" or a point list, got '{s}'"
                )))
            }
            Some(RawCollocation::Points(p)) => {
                if p.is_empty() || p.len() % problem.input_dim() != 0 {
                    return Err(CliError::config(format!(
                        "train.collocation lists {} coordinates, not a multiple of the input dimension {}",
                        p.len(),
                        problem.input_dim()
                    )));
                }
                Collocation::Points(p)
            }
        };
        let train = TrainConfig {
            phase1_epochs: t.phase1_epochs.unwrap_or(e1),
            phase2_epochs: t.phase2_epochs.unwrap_or(e2),
            phase1_lr: t.phase1_lr.unwrap_or(lr1),
            phase2_lr: t.phase2_lr.unwrap_or(lr2),
            seed,
            hidden: t.hidden.unwrap_or(base_train.hidden.clone()),
            collocation: collocation.clone(),
            log_every: t.log_every.unwrap_or(base_train.log_every),
            plateau_stop: t.plateau_stop.unwrap_or(false),
            convergence_window: t.convergence_window.unwrap_or(base_train.convergence_window),
            convergence_tol: t.convergence_tol.unwrap_or(base_train.convergence_tol),
            disable_residual: false,
        };

        let e = raw.evaluation;
        let evaluation = EvaluationConfig {
            gof_samples: e.gof_samples.unwrap_or(1000),
            gof_points_per_dim: e.gof_points_per_dim.unwrap_or(match problem {
                ProblemName::FisherKpp => 31,
                _ => 101,
            }),
            levels: e.levels.unwrap_or_else(epinn::metrics::default_levels),
        };

        let en = raw.ensemble;
        let base_en = EnsembleConfig::default();
        let ensemble = EnsembleConfig {
            n_members: en.n_members.unwrap_or(base_en.n_members),
            lambda_res: en.lambda_res.unwrap_or(base_en.lambda_res),
            epochs: en.epochs.unwrap_or(base_en.epochs),
            warmup_epochs: en.warmup_epochs.unwrap_or(base_en.warmup_epochs),
            omega_fit_epochs: en.omega_fit_epochs.unwrap_or(base_en.omega_fit_epochs),
            lr: en.lr.unwrap_or(base_en.lr),
            hidden: en.hidden.unwrap_or(train.hidden.clone()),
            seed,
            collocation,
        };

        let cfg = ExperimentConfig {
            problem,
            seed,
            output_dir,
            data,
            points_per_dim,
            bounds,
            train,
            evaluation,
            ensemble,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().map_err(|e| CliError::config(format!("train: {e}")))?;
        self.ensemble
            .validate()
            .map_err(|e| CliError::config(format!("ensemble: {e}")))?;
        if self.points_per_dim < 2 {
            return Err(CliError::config("grid.points_per_dim must be at least 2"));
        }
        let n_params = match self.problem {
            ProblemName::Bergman => 3,
            _ => 2,
        };
        if self.bounds.len() != n_params {
            return Err(CliError::config(format!(
                "grid.bounds needs {n_params} [lo, hi] pairs for {}",
                self.problem.as_str()
            )));
        }
        if let Some((i, _)) = self
            .bounds
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(CliError::config(format!("grid.bounds[{i}] must satisfy lo < hi")));
        }
        let d = &self.data;
        if !(d.noise_amplitude >= 0.0 && d.noise_amplitude.is_finite()) {
            return Err(CliError::config("data.noise_amplitude must be non-negative"));
        }
        if let Some(r) = d.noise_region {
            if self.problem != ProblemName::FisherKpp {
                return Err(CliError::config("data.noise_region only applies to fisher-kpp"));
            }
            crate::data::check_region(&r)?;
        }
        match &d.source {
            DataSource::Generate => match self.problem {
                ProblemName::Bergman => {}
                _ => {
                    if d.n_train < 2 || d.n_test < 1 {
                        return Err(CliError::config("need n_train >= 2 and n_test >= 1"));
                    }
                    if d.n_pool < d.n_train {
                        return Err(CliError::config("data.n_pool must be at least data.n_train"));
                    }
                }
            },
            DataSource::Files { train, test } => {
                for p in std::iter::once(train).chain(test) {
                    if !p.is_file() {
                        return Err(CliError::config(format!("data file {} does not exist", p.display())));
                    }
                }
            }
            DataSource::BergmanCsv { path } => {
                if !path.is_file() {
                    return Err(CliError::config(format!("IVGTT record {} does not exist", path.display())));
                }
            }
        }
        if let Some((g, i)) = d.basals {
            if !(g > 0.0 && i > 0.0) {
                return Err(CliError::config("basal levels must be positive"));
            }
        }
        let ev = &self.evaluation;
        if ev.gof_samples == 0 || ev.gof_points_per_dim < 2 {
            return Err(CliError::config("evaluation needs gof_samples >= 1 and gof_points_per_dim >= 2"));
        }
        if ev.levels.is_empty()
            || ev.levels.iter().any(|q| !(*q > 0.0 && *q < 1.0))
            || ev.levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CliError::config("evaluation.levels must be strictly increasing within (0, 1)"));
        }
        Ok(())
    }
}
