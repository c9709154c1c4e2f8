//! Feed-forward networks with exact input derivatives and weight gradients.

mod adam;
mod jet;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use jet::{JetBatch, JetOrder};
pub use mlp::{init_mlp, Activation, Mlp};

use crate::error::{Error, Result};

/// Value, gradient and diagonal Hessian of one network output at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess_diag: Vec<f64>,
}

/// Exact first and unmixed second derivatives of `output_index` at `x`.
pub fn input_jet(mlp: &Mlp, x: &[f64], output_index: usize) -> Result<InputJet> {
    if output_index >= mlp.output_dim() {
        return Err(Error::invalid(format!(
            "output index {output_index} out of range for {} outputs",
            mlp.output_dim()
        )));
    }
    if x.len() != mlp.input_dim() {
        return Err(Error::invalid(format!(
            "input has length {}, network expects {}",
            x.len(),
            mlp.input_dim()
        )));
    }
    let batch = mlp.jet_batch(x, JetOrder::Second)?;
    let d = x.len();
    Ok(InputJet {
        value: batch.value(0, output_index),
        grad: (0..d).map(|i| batch.grad(0, output_index, i)).collect(),
        hess_diag: (0..d).map(|i| batch.hess(0, output_index, i)).collect(),
    })
}

/// A differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    /// Returns the loss and its gradient at `params`.
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(params)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Evaluates `loss` at `params`, rejecting non-finite values with a
/// [`Error::NumericalFailure`] that records the epoch and the norms involved.
pub fn loss_gradient(
    params: &[f64],
    epoch: usize,
    loss: &impl Objective,
) -> Result<(f64, Vec<f64>)> {
    let (value, grad) = loss.value_and_grad(params)?;
    if grad.len() != params.len() {
        return Err(Error::invalid("objective returned a gradient of the wrong length"));
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure {
            epoch,
            message: format!("non-finite loss {value}"),
            weight_norm: norm(params),
            grad_norm: norm(&grad),
        });
    }
    Ok((value, grad))
}
