//! Evidential network wrapper: maps raw network outputs onto evidential heads
//! and solution fields in data units.
//!
//! Raw outputs 0..4 are the evidential heads; any further outputs are latent
//! solution fields (the remote insulin action of the Bergman model). The mean
//! head doubles as the first solution field.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evidential::{constrain_heads, sigmoid, EvidentialOutput};
use crate::netcore::{init_mlp, JetBatch, JetOrder, Mlp};
use crate::pde::{FieldJet, PdeProblem, ProblemKind, MAX_INPUT_DIM};

pub const N_HEADS: usize = 4;
pub const DEFAULT_HIDDEN: [usize; 2] = [16, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EPinnModel {
    pub mlp: Mlp,
    /// `gamma = y_shift + y_scale * raw0`, `beta = y_scale^2 * softplus(raw3)`.
    pub y_shift: f64,
    pub y_scale: f64,
    /// Scale of each latent field output.
    pub latent_scales: Vec<f64>,
}

impl EPinnModel {
    /// Network sized for `problem`, with inputs and targets standardized from `data`.
    pub fn new(problem: &PdeProblem, hidden: &[usize], data: &Dataset, seed: u64) -> Result<Self> {
        if data.input_dim != problem.input_dim() {
            return Err(Error::invalid(format!(
                "{} expects {}-dimensional inputs, data has {}",
                problem.name(),
                problem.input_dim(),
                data.input_dim
            )));
        }
        let n_latent = problem.n_fields() - 1;
        let mut sizes = vec![problem.input_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(N_HEADS + n_latent);
        let (shift, scale): (Vec<f64>, Vec<f64>) = data
            .input_ranges()
            .into_iter()
            .map(|(lo, hi)| {
                let half = 0.5 * (hi - lo);
                (0.5 * (lo + hi), if half > 0.0 { half } else { 1.0 })
            })
            .unzip();
        let mlp = init_mlp(&sizes, seed)?.with_input_normalization(&shift, &scale)?;
        // Standardizing small targets makes the fit chase the noise within a few
        // thousand epochs; only rescale targets that exceed unit magnitude.
        let y_scale = data.targets.iter().fold(1.0f64, |m, y| m.max(y.abs()));
        Ok(EPinnModel {
            mlp,
            y_shift: 0.0,
            y_scale,
            latent_scales: latent_scales(problem),
        })
    }

    pub fn n_latent(&self) -> usize {
        self.latent_scales.len()
    }

    pub fn n_fields(&self) -> usize {
        1 + self.n_latent()
    }

    /// Evidential heads at `point` of `batch`.
    pub fn heads(&self, batch: &JetBatch, point: usize) -> EvidentialOutput {
        let raw = [0, 1, 2, 3].map(|o| batch.value(point, o));
        self.heads_from_raw(raw)
    }

    pub fn heads_from_raw(&self, raw: [f64; 4]) -> EvidentialOutput {
        let mut out = constrain_heads(raw);
        out.gamma = self.y_shift + self.y_scale * out.gamma;
        out.beta *= self.y_scale * self.y_scale;
        out
    }

    /// Derivatives of `(gamma, nu, alpha, beta)` with respect to raw outputs 0..4.
    pub fn head_chain(&self, batch: &JetBatch, point: usize) -> [f64; 4] {
        [
            self.y_scale,
            sigmoid(batch.value(point, 1)),
            sigmoid(batch.value(point, 2)),
            self.y_scale * self.y_scale * sigmoid(batch.value(point, 3)),
        ]
    }

    fn field_output(&self, field: usize) -> (usize, f64, f64) {
        if field == 0 {
            (0, self.y_shift, self.y_scale)
        } else {
            (N_HEADS + field - 1, 0.0, self.latent_scales[field - 1])
        }
    }

    /// Jet of solution field `field` at `point`; needs a second-order batch.
    pub fn field_jet(&self, batch: &JetBatch, point: usize, field: usize) -> FieldJet {
        let (o, shift, scale) = self.field_output(field);
        let mut jet = FieldJet {
            value: shift + scale * batch.value(point, o),
            ..FieldJet::default()
        };
        if batch.order() == JetOrder::Second {
            for i in 0..batch.in_dim().min(MAX_INPUT_DIM) {
                jet.grad[i] = scale * batch.grad(point, o, i);
                jet.hess[i] = scale * batch.hess(point, o, i);
            }
        }
        jet
    }

    /// Adds `d_field`, the adjoint of field `field` at `point`, into the raw
    /// output adjoint buffer of `batch`.
    pub fn scatter_field_adjoint(
        &self,
        batch: &JetBatch,
        point: usize,
        field: usize,
        d_field: &FieldJet,
        adjoint: &mut [f64],
    ) {
        let (o, _, scale) = self.field_output(field);
        adjoint[batch.index(point, 0, o)] += scale * d_field.value;
        if batch.order() == JetOrder::Second {
            for i in 0..batch.in_dim().min(MAX_INPUT_DIM) {
                adjoint[batch.index(point, batch.grad_channel(i), o)] += scale * d_field.grad[i];
                adjoint[batch.index(point, batch.hess_channel(i), o)] += scale * d_field.hess[i];
            }
        }
    }

    /// Field jets at every point of `xs`, one vector per field.
    pub fn field_jets(&self, xs: &[f64]) -> Result<Vec<Vec<FieldJet>>> {
        let batch = self.mlp.jet_batch(xs, JetOrder::Second)?;
        Ok((0..self.n_fields())
            .map(|f| (0..batch.n_points()).map(|p| self.field_jet(&batch, p, f)).collect())
            .collect())
    }

    /// Evidential heads at every point of `xs`.
    pub fn predict(&self, xs: &[f64]) -> Result<Vec<EvidentialOutput>> {
        let batch = self.mlp.jet_batch(xs, JetOrder::Value)?;
        Ok((0..batch.n_points()).map(|p| self.heads(&batch, p)).collect())
    }

    /// Mean head `gamma` at every point of `xs`.
    pub fn predict_mean(&self, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(xs)?.iter().map(|o| o.gamma).collect())
    }
}

/// Typical magnitude of latent fields, so the network outputs stay O(1).
pub(crate) fn latent_scales(problem: &PdeProblem) -> Vec<f64> {
    match problem.kind() {
        ProblemKind::Bergman(inputs) => {
            let b = problem.param_bounds();
            let p2 = 0.5 * (b[1].0 + b[1].1);
            let p3 = 0.5 * (b[2].0 + b[2].1);
            let peak = inputs.insulin.iter().fold(0.0f64, |m, i| m.max(i - inputs.i_b));
            let s = p3 / p2 * peak;
            vec![if s.is_finite() && s > 0.0 { s } else { 0.01 }]
        }
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::input_jet;

    fn toy() -> (PdeProblem, Dataset) {
        let xs: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        (PdeProblem::poisson(), Dataset::new(1, xs, ys).unwrap())
    }

    #[test]
    fn standardization() {
        let (p, d) = toy();
        let m = EPinnModel::new(&p, &DEFAULT_HIDDEN, &d, 1).unwrap();
        assert_eq!((m.y_shift, m.y_scale), (0.0, 5.0));
        assert_eq!(m.mlp.layer_sizes(), &[1, 16, 16, 4]);
        assert_eq!(m.mlp.input_shift(), &[0.5]);
        assert_eq!(m.mlp.input_scale(), &[0.5]);
    }

    #[test]
    fn field_jet_scales_raw_jet() {
        let (p, d) = toy();
        let m = EPinnModel::new(&p, &DEFAULT_HIDDEN, &d, 2).unwrap();
        let x = [0.37];
        let raw = input_jet(&m.mlp, &x, 0).unwrap();
        let f = &m.field_jets(&x).unwrap()[0][0];
        assert!((f.value - (m.y_shift + m.y_scale * raw.value)).abs() < 1e-12);
        assert!((f.grad[0] - m.y_scale * raw.grad[0]).abs() < 1e-12);
        assert!((f.hess[0] - m.y_scale * raw.hess_diag[0]).abs() < 1e-12);
        let pred = m.predict(&x).unwrap()[0];
        assert_eq!(pred.gamma, f.value);
    }
}
