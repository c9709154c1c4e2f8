//! Deep-ensemble baseline: independently initialized ordinary PINNs trained on
//! squared error plus a fixed-weight residual loss, with the equation parameters
//! as free variables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{latent_scales, DEFAULT_HIDDEN};
use crate::netcore::{init_mlp, AdamState, JetBatch, JetOrder, Mlp};
use crate::pde::{FieldJet, PdeProblem, MAX_INPUT_DIM};
use crate::stats::normal_quantile;
use crate::trainer::{check_finite, Collocation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_members: usize,
    pub lambda_res: f64,
    pub epochs: usize,
    /// Leading epochs trained on the data term alone.
    pub warmup_epochs: usize,
    /// Epochs after the warm-up in which only the equation parameters move.
    pub omega_fit_epochs: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Member `k` uses seed `seed + k`.
    pub seed: u64,
    pub collocation: Collocation,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_members: 10,
            lambda_res: 1.0,
            epochs: 50_000,
            warmup_epochs: 10_000,
            omega_fit_epochs: 5_000,
            lr: 1e-3,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
            collocation: Collocation::TrainingInputs,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_res >= 0.0 && self.lambda_res.is_finite()) {
            return Err(Error::invalid("lambda_res must be non-negative"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// One trained ordinary PINN. Output 0 is the solution in data units
/// (`y_scale * raw`); further outputs are latent fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnMember {
    pub mlp: Mlp,
    pub y_scale: f64,
    pub latent_scales: Vec<f64>,
    pub omega: Vec<f64>,
    pub seed: u64,
    pub final_loss: f64,
}

impl PinnMember {
    fn scale(&self, field: usize) -> f64 {
        if field == 0 {
            self.y_scale
        } else {
            self.latent_scales[field - 1]
        }
    }

    fn field_jet(&self, batch: &JetBatch, p: usize, field: usize) -> FieldJet {
        let s = self.scale(field);
        let mut jet = FieldJet {
            value: s * batch.value(p, field),
            ..FieldJet::default()
        };
        if batch.order() == JetOrder::Second {
            for i in 0..batch.in_dim().min(MAX_INPUT_DIM) {
                jet.grad[i] = s * batch.grad(p, field, i);
                jet.hess[i] = s * batch.hess(p, field, i);
            }
        }
        jet
    }

    pub fn predict(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let batch = self.mlp.jet_batch(xs, JetOrder::Value)?;
        Ok((0..batch.n_points()).map(|p| self.y_scale * batch.value(p, 0)).collect())
    }
}

/// Loss `mean ((y - u) / y_ref)^2 + lambda * mean |R|^2` and its gradient over
/// `[weights, omega]`, with `y_ref = max |y|`.
fn member_loss_and_grad(
    member: &PinnMember,
    problem: &PdeProblem,
    data: &Dataset,
    colloc: Option<&[f64]>,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let n_w = member.mlp.n_params();
    let n_fields = problem.n_fields();
    let use_res = lambda > 0.0;
    let shared = colloc.is_none() && use_res;
    let order = if shared { JetOrder::Second } else { JetOrder::Value };
    let batch = member.mlp.jet_batch(&data.inputs, order)?;
    let mut adj = vec![0.0; batch.output_len()];
    let mut grad = vec![0.0; n_w + member.omega.len()];
    let y_ref = data.targets.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let y_ref = if y_ref > 0.0 { y_ref } else { 1.0 };
    let wd = 1.0 / (data.len() as f64 * y_ref * y_ref);
    let mut loss = 0.0;
    for (p, &y) in data.targets.iter().enumerate() {
        let e = member.y_scale * batch.value(p, 0) - y;
        loss += wd * e * e;
        adj[batch.index(p, 0, 0)] += 2.0 * wd * e * member.y_scale;
    }
    if use_res {
        let own;
        let (rb, xs) = match colloc {
            None => (&batch, data.inputs.as_slice()),
            Some(pts) => {
                own = member.mlp.jet_batch(pts, JetOrder::Second)?;
                (&own, pts)
            }
        };
        let mut own_adj = if shared { Vec::new() } else { vec![0.0; rb.output_len()] };
        let radj: &mut [f64] = if shared { &mut adj } else { &mut own_adj };
        let d = problem.input_dim();
        let w = lambda / rb.n_points() as f64;
        let mut fields = [FieldJet::default(); 2];
        let mut d_fields = [FieldJet::default(); 2];
        let mut d_omega = vec![0.0; member.omega.len()];
        for p in 0..rb.n_points() {
            for (f, slot) in fields.iter_mut().enumerate().take(n_fields) {
                *slot = member.field_jet(rb, p, f);
            }
            loss += w * problem.residual_sq_grad(
                &xs[p * d..(p + 1) * d],
                &fields[..n_fields],
                &member.omega,
                &mut d_fields[..n_fields],
                &mut d_omega,
            );
            for (f, df) in d_fields.iter().enumerate().take(n_fields) {
                let s = w * member.scale(f);
                radj[rb.index(p, 0, f)] += s * df.value;
                if rb.order() == JetOrder::Second {
                    for i in 0..d.min(MAX_INPUT_DIM) {
                        radj[rb.index(p, rb.grad_channel(i), f)] += s * df.grad[i];
                        radj[rb.index(p, rb.hess_channel(i), f)] += s * df.hess[i];
                    }
                }
            }
            for (g, dw) in grad[n_w..].iter_mut().zip(&d_omega) {
                *g += w * dw;
            }
        }
        if !shared {
            member.mlp.jet_backward(rb, &own_adj, &mut grad[..n_w])?;
        }
    }
    member.mlp.jet_backward(&batch, &adj, &mut grad[..n_w])?;
    Ok((loss, grad))
}

/// Trains one ordinary PINN. Weights come from `seed`; the equation parameters
/// start uniformly inside the bounds from a stream derived from the same seed.
pub fn train_pinn_member(
    problem: &PdeProblem,
    data: &Dataset,
    lambda_res: f64,
    seed: u64,
    cfg: &EnsembleConfig,
) -> Result<PinnMember> {
    cfg.validate()?;
    if !(lambda_res >= 0.0 && lambda_res.is_finite()) {
        return Err(Error::invalid("lambda_res must be non-negative"));
    }
    if data.input_dim != problem.input_dim() {
        return Err(Error::invalid("data dimension does not match the problem"));
    }
    let mut sizes = vec![problem.input_dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(problem.n_fields());
    let (shift, scale): (Vec<f64>, Vec<f64>) = data
        .input_ranges()
        .into_iter()
        .map(|(lo, hi)| {
            let half = 0.5 * (hi - lo);
            (0.5 * (lo + hi), if half > 0.0 { half } else { 1.0 })
        })
        .unzip();
    let mlp = init_mlp(&sizes, seed)?.with_input_normalization(&shift, &scale)?;
    let bounds = problem.param_bounds().to_vec();
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0e1a_u64);
    let theta: Vec<f64> = bounds.iter().map(|_| rng.random::<f64>()).collect();
    let mut member = PinnMember {
        mlp,
        y_scale: data.targets.iter().fold(1.0f64, |m, y| m.max(y.abs())),
        latent_scales: latent_scales(problem),
        omega: theta.iter().zip(&bounds).zip(&widths).map(|((t, b), w)| b.0 + t * w).collect(),
        seed,
        final_loss: f64::NAN,
    };
    let colloc = match &cfg.collocation {
        Collocation::TrainingInputs => None,
        Collocation::Points(p) => Some(p.as_slice()),
    };
    let n_w = member.mlp.n_params();
    let mut params = member.mlp.params();
    params.extend_from_slice(&theta);
    let mut adam = AdamState::new(params.len(), cfg.lr);
    for epoch in 0..cfg.epochs {
        let lambda = if epoch < cfg.warmup_epochs { 0.0 } else { lambda_res };
        let (loss, mut grad) = member_loss_and_grad(&member, problem, data, colloc, lambda)?;
        check_finite(epoch, loss, &params, &grad)?;
        member.final_loss = loss;
        for (g, w) in grad[n_w..].iter_mut().zip(&widths) {
            *g *= w;
        }
        let frozen = epoch >= cfg.warmup_epochs && epoch < cfg.warmup_epochs + cfg.omega_fit_epochs;
        if frozen {
            grad[..n_w].fill(0.0);
            let keep = params[..n_w].to_vec();
            adam.update(&mut params, &grad, None)?;
            params[..n_w].copy_from_slice(&keep);
        } else {
            adam.update(&mut params, &grad, None)?;
        }
        for i in 0..bounds.len() {
            let t = &mut params[n_w + i];
            *t = t.clamp(0.0, 1.0);
            member.omega[i] = bounds[i].0 + *t * widths[i];
        }
        member.mlp.set_params(&params[..n_w])?;
    }
    member.final_loss = member_loss_and_grad(&member, problem, data, colloc, lambda_res)?.0;
    Ok(member)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub member_seeds: Vec<u64>,
    pub member_omegas: Vec<Vec<f64>>,
    /// Member predictions at `eval_points`, one row per member.
    pub member_curves: Vec<Vec<f64>>,
    pub eval_points: Vec<f64>,
    pub omega_mean: Vec<f64>,
    pub omega_std: Vec<f64>,
    /// 16th and 84th percentiles of the member estimates.
    pub omega_p16_p84: Vec<(f64, f64)>,
    pub predictive_mean: Vec<f64>,
    pub predictive_std: Vec<f64>,
    pub n_failed: usize,
}

/// Sample mean and (n - 1) standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    // offset by the first value so identical entries give an exact mean
    let m = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Linear-interpolated percentile of `v` (`q` in [0, 1]).
fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(s.len() - 1);
    s[i] + (pos - i as f64) * (s[j] - s[i])
}

impl EnsembleResult {
    /// Aggregates members; each curve must hold one value per evaluation point.
    pub fn from_members(members: &[PinnMember], eval_points: &[f64], n_failed: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("no ensemble members to aggregate"));
        }
        let curves = members
            .iter()
            .map(|m| m.predict(eval_points))
            .collect::<Result<Vec<_>>>()?;
        let omegas: Vec<Vec<f64>> = members.iter().map(|m| m.omega.clone()).collect();
        let n_params = omegas[0].len();
        let col = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let (omega_mean, omega_std) = (0..n_params).map(|j| mean_std(&col(&omegas, j))).unzip();
        let omega_p16_p84 = (0..n_params)
            .map(|j| {
                let c = col(&omegas, j);
                (percentile(&c, 0.16), percentile(&c, 0.84))
            })
            .collect();
        let n_eval = curves[0].len();
        let (predictive_mean, predictive_std) = (0..n_eval).map(|j| mean_std(&col(&curves, j))).unzip();
        Ok(EnsembleResult {
            member_seeds: members.iter().map(|m| m.seed).collect(),
            member_omegas: omegas,
            member_curves: curves,
            eval_points: eval_points.to_vec(),
            omega_mean,
            omega_std,
            omega_p16_p84,
            predictive_mean,
            predictive_std,
            n_failed,
        })
    }

    pub fn n_members(&self) -> usize {
        self.member_omegas.len()
    }

    /// Central level-`q` interval `mean ± z std` at evaluation point `i`.
    pub fn interval(&self, i: usize, q: f64) -> Result<(f64, f64)> {
        let z = normal_quantile(0.5 + 0.5 * q)?;
        let (m, s) = (self.predictive_mean[i], self.predictive_std[i]);
        Ok((m - z * s, m + z * s))
    }
}

/// Trains `cfg.n_members` members (seeds `cfg.seed + k`) and aggregates their
/// predictions at `eval_points`. Members that fail numerically are dropped with
/// a warning; more than 10% failures is an error.
pub fn run_ensemble(
    problem: &PdeProblem,
    data: &Dataset,
    eval_points: &[f64],
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    if cfg.n_members < 2 {
        return Err(Error::invalid("an ensemble needs at least two members"));
    }
    let seeds: Vec<u64> = (0..cfg.n_members as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    run_ensemble_with_seeds(problem, data, eval_points, cfg, &seeds)
}

/// As [`run_ensemble`] with explicit member seeds (repeats allowed).
pub fn run_ensemble_with_seeds(
    problem: &PdeProblem,
    data: &Dataset,
    eval_points: &[f64],
    cfg: &EnsembleConfig,
    seeds: &[u64],
) -> Result<EnsembleResult> {
    let outcomes: Vec<Result<PinnMember>> = seeds
        .par_iter()
        .map(|&s| train_pinn_member(problem, data, cfg.lambda_res, s, cfg))
        .collect();
    let mut members = Vec::new();
    let mut failed = 0;
    for (seed, out) in seeds.iter().zip(outcomes) {
        match out {
            Ok(m) => members.push(m),
            Err(e) if e.is_numerical() => {
                log::warn!("ensemble member with seed {seed} failed: {e}");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if members.is_empty() {
        return Err(Error::numerical("every ensemble member failed"));
    }
    if failed as f64 > 0.1 * seeds.len() as f64 {
        return Err(Error::numerical(format!("{failed} of {} ensemble members failed", seeds.len())));
    }
    EnsembleResult::from_members(&members, eval_points, failed)
}
