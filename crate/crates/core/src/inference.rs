//! Grid posterior over the equation parameters, posterior sampling and the
//! Monte Carlo goodness-of-fit test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EPinnModel;
use crate::pde::PdeProblem;
use crate::priorbuild::{residual_sums, GridDensity, OmegaGrid, OmegaPrior};

/// Normalized posterior on the grid with its summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub density: GridDensity,
    pub mean: Vec<f64>,
    pub mode: Vec<f64>,
    /// Central 68% interval of each marginal (16th and 84th percentiles).
    pub ci68: Vec<(f64, f64)>,
}

impl PosteriorTable {
    pub fn from_density(density: GridDensity) -> Result<Self> {
        let grid = density.grid().clone();
        let (best, _) = density.argmax();
        let dims = grid.n_dims();
        let mean = (0..dims).map(|d| density.marginal_moments(d).0).collect();
        let ci68 = (0..dims)
            .map(|d| {
                Ok((
                    marginal_quantile(&density, d, 0.16)?,
                    marginal_quantile(&density, d, 0.84)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(PosteriorTable {
            mode: grid.node(best),
            density,
            mean,
            ci68,
        })
    }

    pub fn grid(&self) -> &OmegaGrid {
        self.density.grid()
    }

    pub fn prob(&self) -> &[f64] {
        self.density.values()
    }

    /// Marginal standard deviation of each parameter under the cell-constant
    /// density used for quantiles and jittered sampling (node variance plus h²/12).
    pub fn std(&self) -> Vec<f64> {
        (0..self.grid().n_dims())
            .map(|d| {
                let h = self.grid().spacing(d);
                (self.density.marginal_moments(d).1 + h * h / 12.0).sqrt()
            })
            .collect()
    }
}

/// Quantile of the `dim` marginal, treating each node as the centre of a cell
/// of constant density and interpolating the CDF linearly inside cells.
pub fn marginal_quantile(density: &GridDensity, dim: usize, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile level {q} outside (0, 1)")));
    }
    let grid = density.grid();
    let h = grid.spacing(dim);
    let m = density.marginal(dim);
    let total: f64 = m.iter().sum::<f64>() * h;
    let (lo_b, hi_b) = grid.bounds()[dim];
    let mut cdf = 0.0;
    for (k, &w) in grid.axis(dim).iter().enumerate() {
        let mass = m[k] * h / total;
        if cdf + mass >= q && mass > 0.0 {
            let frac = (q - cdf) / mass;
            return Ok((w - 0.5 * h + frac * h).clamp(lo_b, hi_b));
        }
        cdf += mass;
    }
    Ok(hi_b)
}

/// `prob ∝ exp(-S / (2 sigma2_R)) * prior`, evaluated in log space.
pub fn posterior_over_grid(
    residual_sums: &[f64],
    sigma2_r: f64,
    prior: &OmegaPrior,
    grid: &OmegaGrid,
) -> Result<PosteriorTable> {
    if !(sigma2_r > 0.0) {
        return Err(Error::invalid(format!("sigma2_R must be positive, got {sigma2_r}")));
    }
    if residual_sums.len() != grid.n_nodes() {
        return Err(Error::invalid("residual sums do not match the grid"));
    }
    let logs: Vec<f64> = residual_sums
        .iter()
        .enumerate()
        .map(|(flat, s)| -s / (2.0 * sigma2_r) - prior.penalty(&grid.node(flat)))
        .collect();
    PosteriorTable::from_density(GridDensity::from_log_values(grid, &logs)?)
}

/// Posterior for a trained model: residual sums from its mean-field jets at `colloc`.
pub fn posterior_for_model(
    model: &EPinnModel,
    problem: &PdeProblem,
    grid: &OmegaGrid,
    sigma2_r: f64,
    prior: &OmegaPrior,
    colloc: &[f64],
) -> Result<(PosteriorTable, Vec<f64>)> {
    let fields = model.field_jets(colloc)?;
    let sums = residual_sums(problem, grid, colloc, &fields)?;
    Ok((posterior_over_grid(&sums, sigma2_r, prior, grid)?, sums))
}

/// Draws nodes by probability mass; with `jitter`, each draw is moved uniformly
/// within its cell (clipped to the parameter box).
pub fn sample_posterior(table: &PosteriorTable, n: usize, seed: u64, jitter: bool) -> Vec<Vec<f64>> {
    let grid = table.grid();
    let mut cum = Vec::with_capacity(grid.n_nodes());
    let mut acc = 0.0;
    for v in table.prob() {
        acc += v;
        cum.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let flat = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
            let mut node = grid.node(flat);
            if jitter {
                for (d, w) in node.iter_mut().enumerate() {
                    let h = grid.spacing(d);
                    let (lo, hi) = grid.bounds()[d];
                    *w = (*w + (rng.random::<f64>() - 0.5) * h).clamp(lo, hi);
                }
            }
            node
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub p_value: f64,
    pub n_samples: usize,
    pub n_failed: usize,
    pub model_deviation: f64,
    pub sample_deviations: DeviationSummary,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Monte Carlo goodness of fit: the share of posterior draws whose solution
/// deviates from the posterior-mean solution at least as much as the model does.
///
/// `model_mean` holds the model's mean prediction at `eval_points`.
pub fn gof_pvalue(
    table: &PosteriorTable,
    model_mean: &[f64],
    problem: &PdeProblem,
    eval_points: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<GofReport> {
    if n_samples == 0 {
        return Err(Error::invalid("goodness-of-fit test needs at least one sample"));
    }
    if model_mean.is_empty() || model_mean.len() * problem.input_dim() != eval_points.len() {
        return Err(Error::invalid("model mean does not match evaluation points"));
    }
    let reference = problem.solve(&table.mean, eval_points)?;
    let model_deviation = rmse(model_mean, &reference);
    let samples = sample_posterior(table, n_samples, seed, true);
    let devs: Vec<Option<f64>> = samples
        .par_iter()
        .map(|omega| problem.solve(omega, eval_points).ok().map(|c| rmse(&c, &reference)))
        .collect();
    let mut ok: Vec<f64> = devs.iter().flatten().copied().collect();
    let n_failed = n_samples - ok.len();
    if n_failed as f64 > 0.01 * n_samples as f64 {
        return Err(Error::numerical(format!(
            "solver failed for {n_failed} of {n_samples} posterior samples"
        )));
    }
    let exceed = ok.iter().filter(|&&d| d >= model_deviation).count();
    ok.sort_by(f64::total_cmp);
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let std = (ok.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    let median = if ok.len() % 2 == 1 {
        ok[ok.len() / 2]
    } else {
        0.5 * (ok[ok.len() / 2 - 1] + ok[ok.len() / 2])
    };
    Ok(GofReport {
        p_value: exceed as f64 / n,
        n_samples: ok.len(),
        n_failed,
        model_deviation,
        sample_deviations: DeviationSummary {
            mean,
            std,
            min: ok[0],
            median,
            max: ok[ok.len() - 1],
        },
    })
}
