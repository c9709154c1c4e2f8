use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epinn::trainer::lr_sweep;
use epinn_cli::checkpoint::load_checkpoint;
use epinn_cli::config::{DataSource, ExperimentConfig, ProblemName};
use epinn_cli::data::{load_experiment_data, write_experiment_data};
use epinn_cli::experiment::{metrics_from_checkpoint, posterior_from_checkpoint, run_ensemble_experiment, run_experiment};
use epinn_cli::{CliError, CliResult};

/// Evidential physics-informed neural networks for inverse problems.
#[derive(Parser)]
#[command(name = "epinn", version)]
struct Cli {
    /// Worker threads for grid and ensemble work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest the data of a config and write it as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `<output_dir>/data`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full two-phase E-PINN run with posterior, goodness of fit and calibration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute the parameter posterior from a trained checkpoint.
    Posterior {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Calibration metrics of a checkpoint on the configured test data.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Deep-ensemble baseline run.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
    },
    /// E-PINN run on the Bergman minimal model.
    Bergman {
        #[arg(long)]
        config: Option<PathBuf>,
        /// IVGTT record `t_min,glucose_mg_dl,insulin_muU_ml`; synthetic data otherwise.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Phase-1 validation NLL for a list of learning rates.
    LrSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1e-4,3e-4,1e-3,3e-3")]
        lrs: Vec<f64>,
        #[arg(long, default_value_t = 5000)]
        epochs: usize,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn bergman_config(config: Option<&Path>, csv: Option<PathBuf>) -> CliResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let mut cfg = ExperimentConfig::defaults(ProblemName::Bergman)?;
            if let Ok(v) = std::env::var(epinn_cli::config::SEED_ENV) {
                cfg.set_seed(v.trim().parse().map_err(|_| CliError::config("EPINN_SEED is not an unsigned integer"))?);
            }
            cfg
        }
    };
    if cfg.problem != ProblemName::Bergman {
        return Err(CliError::config("the bergman command needs experiment.problem = \"bergman\""));
    }
    if let Some(path) = csv {
        cfg.data.source = DataSource::BergmanCsv { path };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = load_experiment_data(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            write_experiment_data(&dir, &data)?;
            println!("wrote {} training and {} test points to {}", data.train.len(), data.test.len(), dir.display());
        }
        Command::Train { config } => {
            let run = run_experiment(&ExperimentConfig::load(&config)?)?;
            print_json(&run.summary)?;
        }
        Command::Posterior { config, checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&posterior_from_checkpoint(&cfg, &load_checkpoint(&checkpoint)?)?)?;
        }
        Command::Metrics { config, checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&metrics_from_checkpoint(&cfg, &load_checkpoint(&checkpoint)?)?)?;
        }
        Command::Ensemble { config } => {
            let run = run_ensemble_experiment(&ExperimentConfig::load(&config)?)?;
            print_json(&run.summary)?;
        }
        Command::Bergman { config, csv } => {
            let run = run_experiment(&bergman_config(config.as_deref(), csv)?)?;
            print_json(&run.summary)?;
        }
        Command::LrSweep { config, lrs, epochs } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = load_experiment_data(&cfg)?;
            let rows = lr_sweep(&data.problem, &data.train, &cfg.train, &lrs, epochs).map_err(|e| CliError::at("lr-sweep", e))?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let mut w = csv::Writer::from_path(cfg.output_dir.join("lr_sweep.csv"))?;
            w.write_record(["lr", "val_nll"])?;
            for (lr, nll) in &rows {
                println!("lr {lr:e}: validation nll {nll:.6}");
                w.write_record([lr.to_string(), nll.to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epinn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
