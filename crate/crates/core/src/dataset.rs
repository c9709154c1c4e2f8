//! Observations used for training and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major inputs with one scalar target per point.
///
/// `truth` and `noise_mag` are known only for synthetic data; they feed the
/// noise-correlation metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub noise_mag: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let ds = Dataset {
            input_dim,
            inputs,
            targets,
            truth: None,
            noise_mag: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_truth(mut self, truth: Vec<f64>, noise_mag: Vec<f64>) -> Result<Self> {
        self.truth = Some(truth);
        self.noise_mag = Some(noise_mag);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if self.targets.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if self.inputs.len() != self.targets.len() * self.input_dim {
            return Err(Error::invalid(format!(
                "{} input coordinates for {} targets of dimension {}",
                self.inputs.len(),
                self.targets.len(),
                self.input_dim
            )));
        }
        let n = self.targets.len();
        for (name, col) in [("truth", &self.truth), ("noise_mag", &self.noise_mag)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::invalid(format!("{name} column has {} rows, expected {n}", c.len())));
                }
            }
        }
        if self.inputs.iter().chain(&self.targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("row {bad} out of range")));
        }
        let pick = |col: &[f64]| indices.iter().map(|&i| col[i]).collect::<Vec<_>>();
        let inputs = indices
            .iter()
            .flat_map(|&i| self.point(i).iter().copied())
            .collect();
        let ds = Dataset {
            input_dim: self.input_dim,
            inputs,
            targets: pick(&self.targets),
            truth: self.truth.as_deref().map(pick),
            noise_mag: self.noise_mag.as_deref().map(pick),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Per-coordinate `(min, max)` of the inputs.
    pub fn input_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.input_dim)
            .map(|i| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                    let v = self.inputs[k * self.input_dim + i];
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }
}
