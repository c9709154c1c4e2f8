//! Two-phase training. Phase 1 fits the evidential heads to data alone; phase 2
//! adds the residual likelihood with a learnable variance `sigma2_R` and treats
//! the equation parameters as MAP variables under the data-driven priors.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evidential::{nll, nll_with_grad};
use crate::model::{EPinnModel, DEFAULT_HIDDEN, N_HEADS};
use crate::netcore::{AdamState, JetBatch, JetOrder};
use crate::pde::{FieldJet, PdeProblem, MAX_INPUT_DIM};
use crate::priorbuild::{OmegaPrior, ResidualWeightPrior};

/// Where the residual is evaluated in phase 2.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum Collocation {
    #[default]
    TrainingInputs,
    /// Row-major points.
    Points(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub collocation: Collocation,
    pub log_every: usize,
    /// Stop a phase early once the loss changes by less than `convergence_tol`
    /// (relative) over `convergence_window` epochs.
    pub plateau_stop: bool,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Drops the residual term from phase 2 (diagnostics only).
    pub disable_residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1_epochs: 50_000,
            phase2_epochs: 50_000,
            phase1_lr: 1e-4,
            phase2_lr: 5e-4,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            collocation: Collocation::TrainingInputs,
            log_every: 1000,
            plateau_stop: false,
            convergence_window: 10_000,
            convergence_tol: 1e-6,
            disable_residual: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phase1_lr > 0.0 && self.phase2_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be positive"));
        }
        if self.plateau_stop && (self.convergence_window == 0 || !(self.convergence_tol > 0.0)) {
            return Err(Error::invalid("plateau detection needs a window and a positive tolerance"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: u8,
    pub epoch: usize,
    pub data_nll: f64,
    pub residual_term: f64,
    pub sigma2_r: f64,
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: EPinnModel,
    pub log_sigma2_r: f64,
    pub omega: Vec<f64>,
    pub adam: AdamState,
    pub epoch: usize,
    pub loss_history: VecDeque<f64>,
    /// `(epoch, sigma2_R)` samples taken every `log_every` epochs.
    pub sigma2_trajectory: Vec<(usize, f64)>,
}

impl TrainState {
    /// Phase-2 starting point: `sigma2_R` at the inverse-gamma mean, `omega` at
    /// the prior mode.
    pub fn new(model: EPinnModel, prior: &OmegaPrior, residual: &ResidualWeightPrior, lr: f64) -> Self {
        let n = model.mlp.n_params() + 1 + prior.mu.len();
        TrainState {
            model,
            log_sigma2_r: residual.mean().ln(),
            omega: prior.mu.clone(),
            adam: AdamState::new(n, lr),
            epoch: 0,
            loss_history: VecDeque::new(),
            sigma2_trajectory: Vec::new(),
        }
    }

    pub fn sigma2_r(&self) -> f64 {
        self.log_sigma2_r.exp()
    }
}

/// Priors and data shared by every phase-2 evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Phase2Context<'a> {
    pub data: &'a Dataset,
    pub problem: &'a PdeProblem,
    pub omega_prior: &'a OmegaPrior,
    pub residual_prior: &'a ResidualWeightPrior,
    /// `None` evaluates the residual at the training inputs.
    pub colloc: Option<&'a [f64]>,
    pub disable_residual: bool,
}

/// The phase-2 loss split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phase2Terms {
    pub data_nll: f64,
    /// `S = sum_k |R_k|^2`.
    pub residual_sum: f64,
    /// `S / (2 sigma2_R)`.
    pub residual_term: f64,
    /// `(alpha_r + 1) ln sigma2_R + beta_r / sigma2_R`.
    pub sigma_term: f64,
    pub prior_term: f64,
    pub total: f64,
}

pub(crate) fn check_finite(epoch: usize, loss: f64, params: &[f64], grad: &[f64]) -> Result<()> {
    if loss.is_finite() && grad.iter().all(|g| g.is_finite()) {
        return Ok(());
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Err(Error::NumericalFailure {
        epoch,
        message: format!("non-finite loss {loss}"),
        weight_norm: norm(params),
        grad_norm: norm(grad),
    })
}

/// Adds the NLL of every data point and its raw-output adjoint (scaled by `weight`).
fn accumulate_nll(
    model: &EPinnModel,
    batch: &JetBatch,
    targets: &[f64],
    weight: f64,
    adjoint: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for (p, &y) in targets.iter().enumerate() {
        let out = model.heads(batch, p);
        let (v, d) = nll_with_grad(&out, y);
        let chain = model.head_chain(batch, p);
        for o in 0..N_HEADS {
            adjoint[batch.index(p, 0, o)] += weight * d[o] * chain[o];
        }
        total += v;
    }
    total
}

/// Mean NLL over `data` and its gradient with respect to the network weights.
pub fn phase1_loss_and_grad(model: &EPinnModel, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let batch = model.mlp.jet_batch(&data.inputs, JetOrder::Value)?;
    let mut adjoint = vec![0.0; batch.output_len()];
    let w = 1.0 / data.len() as f64;
    let total = accumulate_nll(model, &batch, &data.targets, w, &mut adjoint);
    let mut grad = vec![0.0; model.mlp.n_params()];
    model.mlp.jet_backward(&batch, &adjoint, &mut grad)?;
    Ok((total * w, grad))
}

/// Mean NLL of `model` on `data`.
pub fn mean_nll(model: &EPinnModel, data: &Dataset) -> Result<f64> {
    let preds = model.predict(&data.inputs)?;
    Ok(preds.iter().zip(&data.targets).map(|(o, &y)| nll(o, y)).sum::<f64>() / data.len() as f64)
}

fn plateaued(history: &mut VecDeque<f64>, loss: f64, window: usize, tol: f64) -> bool {
    history.push_back(loss);
    if history.len() > window + 1 {
        history.pop_front();
    }
    if history.len() <= window {
        return false;
    }
    let then = history[0];
    (loss - then).abs() <= tol * then.abs().max(f64::MIN_POSITIVE)
}

/// Full-batch Adam on the mean NLL.
pub fn phase1_train(
    model: EPinnModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(EPinnModel, Vec<LogRow>)> {
    cfg.validate()?;
    let mut model = model;
    let mut params = model.mlp.params();
    let mut adam = AdamState::new(params.len(), cfg.phase1_lr);
    let mut history = VecDeque::new();
    let mut log = Vec::new();
    for epoch in 0..cfg.phase1_epochs {
        let (loss, grad) = phase1_loss_and_grad(&model, data)?;
        check_finite(epoch, loss, &params, &grad)?;
        if epoch % cfg.log_every == 0 {
            log::debug!("phase 1 epoch {epoch}: nll {loss:.6}");
            log.push(LogRow {
                phase: 1,
                epoch,
                data_nll: loss,
                residual_term: 0.0,
                sigma2_r: f64::NAN,
                omega: Vec::new(),
            });
        }
        if cfg.plateau_stop && plateaued(&mut history, loss, cfg.convergence_window, cfg.convergence_tol) {
            log::info!("phase 1 plateaued at epoch {epoch}");
            break;
        }
        adam.update(&mut params, &grad, None)?;
        model.mlp.set_params(&params)?;
    }
    Ok((model, log))
}

fn scaled(jet: &FieldJet, s: f64) -> FieldJet {
    let mut out = *jet;
    out.value *= s;
    for i in 0..MAX_INPUT_DIM {
        out.grad[i] *= s;
        out.hess[i] *= s;
    }
    out
}

/// Phase-2 loss and its gradient over `[weights, ln sigma2_R, omega]`.
pub fn phase2_loss_and_grad(
    model: &EPinnModel,
    log_sigma2_r: f64,
    omega: &[f64],
    ctx: &Phase2Context<'_>,
) -> Result<(Phase2Terms, Vec<f64>)> {
    let problem = ctx.problem;
    let n_w = model.mlp.n_params();
    let n_omega = problem.n_params();
    if omega.len() != n_omega {
        return Err(Error::invalid("omega length does not match problem"));
    }
    let mut grad = vec![0.0; n_w + 1 + n_omega];
    let sigma2 = log_sigma2_r.exp();
    let use_residual = !ctx.disable_residual;
    let shared = ctx.colloc.is_none();
    let data_order = if shared && use_residual { JetOrder::Second } else { JetOrder::Value };

    let data_batch = model.mlp.jet_batch(&ctx.data.inputs, data_order)?;
    let mut data_adj = vec![0.0; data_batch.output_len()];
    let data_nll = accumulate_nll(model, &data_batch, &ctx.data.targets, 1.0, &mut data_adj);

    let mut s_total = 0.0;
    if use_residual {
        let own_batch;
        let (batch, xs) = match ctx.colloc {
            None => (&data_batch, ctx.data.inputs.as_slice()),
            Some(pts) => {
                own_batch = model.mlp.jet_batch(pts, JetOrder::Second)?;
                (&own_batch, pts)
            }
        };
        let mut own_adj = if shared { Vec::new() } else { vec![0.0; batch.output_len()] };
        let adj: &mut [f64] = if shared { &mut data_adj } else { &mut own_adj };
        let n_fields = model.n_fields();
        let d = problem.input_dim();
        let w = 0.5 / sigma2;
        let mut fields = [FieldJet::default(); 2];
        let mut d_fields = [FieldJet::default(); 2];
        let mut d_omega = vec![0.0; n_omega];
        for p in 0..batch.n_points() {
            for (f, slot) in fields.iter_mut().enumerate().take(n_fields) {
                *slot = model.field_jet(batch, p, f);
            }
            let r2 = problem.residual_sq_grad(
                &xs[p * d..(p + 1) * d],
                &fields[..n_fields],
                omega,
                &mut d_fields[..n_fields],
                &mut d_omega,
            );
            s_total += r2;
            for (f, df) in d_fields.iter().enumerate().take(n_fields) {
                model.scatter_field_adjoint(batch, p, f, &scaled(df, w), adj);
            }
            for (g, dw) in grad[n_w + 1..].iter_mut().zip(&d_omega) {
                *g += w * dw;
            }
        }
        if !shared {
            model.mlp.jet_backward(batch, &own_adj, &mut grad[..n_w])?;
        }
    }
    model.mlp.jet_backward(&data_batch, &data_adj, &mut grad[..n_w])?;

    let rp = ctx.residual_prior;
    let residual_term = s_total / (2.0 * sigma2);
    let sigma_term = (rp.alpha_r + 1.0) * log_sigma2_r + rp.beta_r / sigma2;
    grad[n_w] = -residual_term + (rp.alpha_r + 1.0) - rp.beta_r / sigma2;

    let op = ctx.omega_prior;
    let prior_term = op.penalty(omega);
    for i in 0..n_omega {
        grad[n_w + 1 + i] += (omega[i] - op.mu[i]) / op.sigma2[i];
    }
    let terms = Phase2Terms {
        data_nll,
        residual_sum: s_total,
        residual_term,
        sigma_term,
        prior_term,
        total: data_nll + residual_term + sigma_term + prior_term,
    };
    Ok((terms, grad))
}

/// Value of the phase-2 loss at `state`.
pub fn phase2_loss(state: &TrainState, ctx: &Phase2Context<'_>) -> Result<f64> {
    Ok(phase2_loss_and_grad(&state.model, state.log_sigma2_r, &state.omega, ctx)?.0.total)
}

/// Adam over weights, `ln sigma2_R` and the equation parameters.
///
/// The parameters are stepped in unit box coordinates `(omega - lo) / (hi - lo)`
/// and clamped to the box after every step.
pub fn phase2_train(
    mut state: TrainState,
    ctx: &Phase2Context<'_>,
    cfg: &TrainConfig,
) -> Result<(TrainState, Vec<LogRow>)> {
    cfg.validate()?;
    let bounds = ctx.problem.param_bounds().to_vec();
    let n_w = state.model.mlp.n_params();
    let n_total = n_w + 1 + bounds.len();
    if state.adam.len() != n_total {
        return Err(Error::invalid("optimizer state does not match the trainable parameters"));
    }
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    for (w, &(lo, hi)) in state.omega.iter_mut().zip(&bounds) {
        *w = w.clamp(lo, hi);
    }
    let mut params = state.model.mlp.params();
    params.push(state.log_sigma2_r);
    params.extend(
        state
            .omega
            .iter()
            .zip(&bounds)
            .zip(&widths)
            .map(|((w, (lo, _)), width)| (w - lo) / width),
    );
    let mut log = Vec::new();
    for _ in 0..cfg.phase2_epochs {
        let epoch = state.epoch;
        let (terms, mut grad) =
            phase2_loss_and_grad(&state.model, state.log_sigma2_r, &state.omega, ctx)?;
        check_finite(epoch, terms.total, &params, &grad)?;
        if epoch % cfg.log_every == 0 {
            let s2 = state.sigma2_r();
            log::debug!(
                "phase 2 epoch {epoch}: nll {:.4} residual {:.4e} sigma2_R {s2:.4e} omega {:?}",
                terms.data_nll,
                terms.residual_term,
                state.omega
            );
            state.sigma2_trajectory.push((epoch, s2));
            log.push(LogRow {
                phase: 2,
                epoch,
                data_nll: terms.data_nll,
                residual_term: terms.residual_term,
                sigma2_r: s2,
                omega: state.omega.clone(),
            });
        }
        if cfg.plateau_stop
            && plateaued(&mut state.loss_history, terms.total, cfg.convergence_window, cfg.convergence_tol)
        {
            log::info!("phase 2 plateaued at epoch {epoch}");
            break;
        }
        for (i, &width) in widths.iter().enumerate() {
            grad[n_w + 1 + i] *= width;
        }
        state.adam.update(&mut params, &grad, None)?;
        for i in 0..bounds.len() {
            let t = &mut params[n_w + 1 + i];
            *t = t.clamp(0.0, 1.0);
            state.omega[i] = bounds[i].0 + *t * widths[i];
        }
        state.log_sigma2_r = params[n_w];
        state.model.mlp.set_params(&params[..n_w])?;
        state.epoch += 1;
    }
    state.sigma2_trajectory.push((state.epoch, state.sigma2_r()));
    Ok((state, log))
}

/// Validation NLL after a short phase-1 run at each learning rate.
///
/// The data are split in half at random (per `cfg.seed`); the first half trains,
/// the second validates.
pub fn lr_sweep(
    problem: &PdeProblem,
    data: &Dataset,
    cfg: &TrainConfig,
    lrs: &[f64],
    epochs: usize,
) -> Result<Vec<(f64, f64)>> {
    if data.len() < 4 {
        return Err(Error::invalid("learning-rate sweep needs at least 4 points"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let half = data.len() / 2;
    let train = data.subset(&idx[..half])?;
    let valid = data.subset(&idx[half..])?;
    lrs.iter()
        .map(|&lr| {
            let model = EPinnModel::new(problem, &cfg.hidden, &train, cfg.seed)?;
            let sweep_cfg = TrainConfig {
                phase1_epochs: epochs,
                phase1_lr: lr,
                plateau_stop: false,
                ..cfg.clone()
            };
            let (fitted, _) = phase1_train(model, &train, &sweep_cfg)?;
            Ok((lr, mean_nll(&fitted, &valid)?))
        })
        .collect()
}
