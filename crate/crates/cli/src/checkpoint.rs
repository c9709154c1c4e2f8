//! Versioned checkpoint files: a magic line `EPINN1`, one line of JSON, and a
//! trailing `checksum <sha256 of the JSON line>` line.

use std::path::Path;

use epinn::model::EPinnModel;
use epinn::netcore::{init_mlp, Activation};
use epinn::pde::BergmanInputs;
use epinn::priorbuild::{OmegaPrior, ResidualWeightPrior};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ProblemName;
use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "EPINN1";
const MAGIC_FAMILY: &str = "EPINN";

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (missing {MAGIC} header)")]
    NotCheckpoint,
    #[error("checkpoint version mismatch: file is {found}, this build reads {MAGIC}")]
    VersionMismatch { found: String },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (file corrupted)")]
    Checksum,
    #[error("checkpoint body is malformed: {0}")]
    Body(String),
}

/// Trained network, training state and priors at the end of a phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub problem: ProblemName,
    /// Training phase that produced the checkpoint (1 or 2).
    pub phase: u8,
    pub epoch: usize,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub y_shift: f64,
    pub y_scale: f64,
    pub latent_scales: Vec<f64>,
    pub log_sigma2_r: Option<f64>,
    pub omega: Option<Vec<f64>>,
    pub omega_prior: Option<OmegaPrior>,
    pub residual_prior: Option<ResidualWeightPrior>,
    pub param_bounds: Vec<(f64, f64)>,
    /// The IVGTT record a Bergman model was trained on.
    pub bergman_record: Option<BergmanInputs>,
}

impl Checkpoint {
    /// Phase-1 checkpoint: network only.
    pub fn phase1(problem: ProblemName, model: &EPinnModel, seed: u64, epoch: usize, bounds: &[(f64, f64)]) -> Self {
        Checkpoint {
            problem,
            phase: 1,
            epoch,
            seed,
            layer_sizes: model.mlp.layer_sizes().to_vec(),
            activation: model.mlp.activation(),
            params: model.mlp.params(),
            input_shift: model.mlp.input_shift().to_vec(),
            input_scale: model.mlp.input_scale().to_vec(),
            y_shift: model.y_shift,
            y_scale: model.y_scale,
            latent_scales: model.latent_scales.clone(),
            log_sigma2_r: None,
            omega: None,
            omega_prior: None,
            residual_prior: None,
            param_bounds: bounds.to_vec(),
            bergman_record: None,
        }
    }

    /// Rebuilds the network.
    pub fn model(&self) -> CliResult<EPinnModel> {
        let mut mlp = init_mlp(&self.layer_sizes, 0)
            .and_then(|m| m.with_activation(self.activation).with_input_normalization(&self.input_shift, &self.input_scale))
            .map_err(|e| CliError::config(format!("checkpoint network: {e}")))?;
        mlp.set_params(&self.params)
            .map_err(|e| CliError::config(format!("checkpoint network: {e}")))?;
        Ok(EPinnModel {
            mlp,
            y_shift: self.y_shift,
            y_scale: self.y_scale,
            latent_scales: self.latent_scales.clone(),
        })
    }

    pub fn sigma2_r(&self) -> Option<f64> {
        self.log_sigma2_r.map(f64::exp)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_string(self).expect("checkpoint fields serialize");
        let sum = hex::encode(Sha256::digest(body.as_bytes()));
        format!("{MAGIC}\n{body}\nchecksum {sum}\n").into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let text = std::str::from_utf8(bytes).map_err(|_| CheckpointError::Checksum)?;
        let mut lines = text.split('\n');
        let head = lines.next().unwrap_or("");
        if head != MAGIC {
            return Err(if head.starts_with(MAGIC_FAMILY) {
                CheckpointError::VersionMismatch { found: head.to_string() }
            } else if head.is_empty() || MAGIC.starts_with(head) {
                CheckpointError::Truncated
            } else {
                CheckpointError::NotCheckpoint
            });
        }
        let body = lines.next().ok_or(CheckpointError::Truncated)?;
        let sum_line = lines.next().ok_or(CheckpointError::Truncated)?;
        if lines.next() != Some("") || lines.next().is_some() {
            return Err(CheckpointError::Truncated);
        }
        let sum = sum_line.strip_prefix("checksum ").ok_or(CheckpointError::Truncated)?;
        if sum.len() != 64 {
            return Err(CheckpointError::Truncated);
        }
        if hex::encode(Sha256::digest(body.as_bytes())) != sum {
            return Err(CheckpointError::Checksum);
        }
        serde_json::from_str(body).map_err(|e| CheckpointError::Body(e.to_string()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    std::fs::write(path, ckpt.to_bytes())
        .map_err(|e| CliError::Io(format!("cannot write checkpoint {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
