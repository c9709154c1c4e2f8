//! Data-driven priors: a Gaussian over the equation parameters from the phase-1
//! fit, and inverse-gamma hyperparameters for the residual weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{FieldJet, PdeProblem};

pub const DEFAULT_POINTS_PER_DIM: usize = 51;

/// Floor applied inside logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

const SIGMA2_SCAN_LO: f64 = 1e-8;
const SIGMA2_SCAN_HI: f64 = 1e8;
const SCAN_PER_DECADE: usize = 60;
const GOLDEN_REL_TOL: f64 = 1e-4;

/// Uniform tensor grid over the parameter box. Flat node indices run with the
/// last parameter fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaGrid {
    bounds: Vec<(f64, f64)>,
    points_per_dim: usize,
    nodes: Vec<Vec<f64>>,
    cell_volume: f64,
}

impl OmegaGrid {
    pub fn new(bounds: &[(f64, f64)], points_per_dim: usize) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("grid needs at least one dimension"));
        }
        if points_per_dim < 2 {
            return Err(Error::DegenerateInput(format!(
                "grid needs at least 2 points per dimension, got {points_per_dim}"
            )));
        }
        let n_total = (points_per_dim as f64).powi(bounds.len() as i32);
        if n_total > 5e7 {
            return Err(Error::invalid(format!("grid with {n_total:.0} nodes is too large")));
        }
        let mut nodes = Vec::with_capacity(bounds.len());
        let mut cell_volume = 1.0;
        for &(lo, hi) in bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("bad grid interval ({lo}, {hi})")));
            }
            let h = (hi - lo) / (points_per_dim - 1) as f64;
            let mut axis: Vec<f64> = (0..points_per_dim).map(|k| lo + k as f64 * h).collect();
            axis[points_per_dim - 1] = hi;
            nodes.push(axis);
            cell_volume *= h;
        }
        Ok(OmegaGrid {
            bounds: bounds.to_vec(),
            points_per_dim,
            nodes,
            cell_volume,
        })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn points_per_dim(&self) -> usize {
        self.points_per_dim
    }

    pub fn n_dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.points_per_dim.pow(self.n_dims() as u32)
    }

    pub fn axis(&self, dim: usize) -> &[f64] {
        &self.nodes[dim]
    }

    pub fn spacing(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        (hi - lo) / (self.points_per_dim - 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Per-dimension axis indices of a flat node index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n_dims()];
        let mut rem = flat;
        for d in (0..self.n_dims()).rev() {
            idx[d] = rem % self.points_per_dim;
            rem /= self.points_per_dim;
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(d, &k)| self.nodes[d][k])
            .collect()
    }

    /// Nearest node along each axis, clamped to the box.
    pub fn nearest_flat(&self, omega: &[f64]) -> usize {
        let mut flat = 0;
        for (d, &w) in omega.iter().enumerate() {
            let (lo, _) = self.bounds[d];
            let k = ((w - lo) / self.spacing(d)).round();
            let k = k.clamp(0.0, (self.points_per_dim - 1) as f64) as usize;
            flat = flat * self.points_per_dim + k;
        }
        flat
    }
}

/// Density sampled at grid nodes, normalized so the node Riemann sum is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    grid: OmegaGrid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `exp(log_values)` over the grid; the maximum is shifted to 0
    /// first so very peaked densities do not underflow to all zeros.
    pub fn from_log_values(grid: &OmegaGrid, log_values: &[f64]) -> Result<Self> {
        if log_values.len() != grid.n_nodes() {
            return Err(Error::invalid(format!(
                "expected {} node values, got {}",
                grid.n_nodes(),
                log_values.len()
            )));
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::numerical("log density has NaN or +inf entries"));
        }
        let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateInput("density is zero everywhere".into()));
        }
        let values: Vec<f64> = log_values.iter().map(|v| (v - max).exp()).collect();
        Self::from_values(grid, values)
    }

    pub fn from_values(grid: &OmegaGrid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::invalid(format!(
                "expected {} node values, got {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("density values must be finite and non-negative"));
        }
        // compensated sum: the normalization invariant is checked at 1e-9
        let total: f64 = kahan_sum(values.iter().copied()) * grid.cell_volume();
        if !(total > 0.0) {
            return Err(Error::DegenerateInput("density is zero everywhere".into()));
        }
        for v in &mut values {
            *v /= total;
        }
        Ok(GridDensity {
            grid: grid.clone(),
            values,
        })
    }

    pub fn uniform(grid: &OmegaGrid) -> Self {
        Self::from_values(grid, vec![1.0; grid.n_nodes()]).expect("uniform density is valid")
    }

    /// Diagonal Gaussian `exp(-sum (w - mu)^2 / (2 sigma2))` normalized on the grid.
    pub fn gaussian(grid: &OmegaGrid, mu: &[f64], sigma2: &[f64]) -> Result<Self> {
        if mu.len() != grid.n_dims() || sigma2.len() != grid.n_dims() {
            return Err(Error::invalid("gaussian dimension does not match grid"));
        }
        if sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("gaussian variances must be positive"));
        }
        // separable: precompute per-axis exponents
        let per_axis: Vec<Vec<f64>> = (0..grid.n_dims())
            .map(|d| {
                grid.axis(d)
                    .iter()
                    .map(|w| -(w - mu[d]) * (w - mu[d]) / (2.0 * sigma2[d]))
                    .collect()
            })
            .collect();
        let logs: Vec<f64> = (0..grid.n_nodes())
            .map(|flat| {
                grid.multi_index(flat)
                    .iter()
                    .enumerate()
                    .map(|(d, &k)| per_axis[d][k])
                    .sum()
            })
            .collect();
        Self::from_log_values(grid, &logs)
    }

    pub fn grid(&self) -> &OmegaGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Riemann sum of the density; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    /// Marginal density along `dim`, one value per axis node.
    pub fn marginal(&self, dim: usize) -> Vec<f64> {
        let n = self.grid.points_per_dim();
        let mut out = vec![0.0; n];
        let rest = self.grid.cell_volume() / self.grid.spacing(dim);
        for (flat, v) in self.values.iter().enumerate() {
            out[self.grid.multi_index(flat)[dim]] += v * rest;
        }
        out
    }

    /// Mean and variance of the `dim` marginal.
    pub fn marginal_moments(&self, dim: usize) -> (f64, f64) {
        let m = self.marginal(dim);
        let h = self.grid.spacing(dim);
        let axis = self.grid.axis(dim);
        let mass: f64 = m.iter().sum::<f64>() * h;
        let mean = m.iter().zip(axis).map(|(p, w)| p * w).sum::<f64>() * h / mass;
        let var = m
            .iter()
            .zip(axis)
            .map(|(p, w)| p * (w - mean) * (w - mean))
            .sum::<f64>()
            * h
            / mass;
        (mean, var)
    }

    /// Lowest flat index attaining the maximum, and whether the maximum was tied.
    pub fn argmax(&self) -> (usize, bool) {
        let mut best = 0;
        let mut tied = false;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
                tied = false;
            } else if v == self.values[best] {
                tied = true;
            }
        }
        (best, tied)
    }
}

fn kahan_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in it {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Diagonal Gaussian prior over the equation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaPrior {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl OmegaPrior {
    /// `sum_i (w_i - mu_i)^2 / (2 sigma2_i)`.
    pub fn penalty(&self, omega: &[f64]) -> f64 {
        omega
            .iter()
            .zip(&self.mu)
            .zip(&self.sigma2)
            .map(|((w, m), s)| (w - m) * (w - m) / (2.0 * s))
            .sum()
    }
}

/// Inverse-gamma prior on the residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualWeightPrior {
    pub alpha_r: f64,
    pub beta_r: f64,
    pub sigma2_ini: f64,
    pub sigma2_asy: f64,
}

impl ResidualWeightPrior {
    pub fn mean(&self) -> f64 {
        self.beta_r / (self.alpha_r - 1.0)
    }

    pub fn mode(&self) -> f64 {
        self.beta_r / (self.alpha_r + 1.0)
    }
}

/// `M(w) = mean_j (L_p(x_j; w) - gamma_j)^2` at every grid node.
///
/// `gamma` holds the phase-1 mean at the row-major `data_inputs`.
pub fn msd_surface(
    gamma: &[f64],
    problem: &PdeProblem,
    grid: &OmegaGrid,
    data_inputs: &[f64],
) -> Result<Vec<f64>> {
    let d = problem.input_dim();
    if gamma.is_empty() || data_inputs.len() != gamma.len() * d {
        return Err(Error::invalid(format!(
            "need one mean per data input: {} means for {} coordinates",
            gamma.len(),
            data_inputs.len()
        )));
    }
    check_grid(problem, grid)?;
    let n = gamma.len() as f64;
    (0..grid.n_nodes())
        .into_par_iter()
        .map(|flat| {
            let omega = grid.node(flat);
            let sol = problem.solve(&omega, data_inputs)?;
            Ok(sol.iter().zip(gamma).map(|(l, g)| (l - g) * (l - g)).sum::<f64>() / n)
        })
        .collect()
}

fn check_grid(problem: &PdeProblem, grid: &OmegaGrid) -> Result<()> {
    if grid.n_dims() != problem.n_params() {
        return Err(Error::invalid(format!(
            "grid has {} dimensions, problem has {} parameters",
            grid.n_dims(),
            problem.n_params()
        )));
    }
    Ok(())
}

/// `f(w) ∝ exp(-M(w) / (2 Mbar))` with `Mbar` the grid average of `M`.
pub fn density_from_msd(msd: &[f64], grid: &OmegaGrid) -> Result<GridDensity> {
    if msd.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::invalid("mean squared deviations must be finite and >= 0"));
    }
    if msd.len() != grid.n_nodes() {
        return Err(Error::invalid("msd length does not match grid"));
    }
    let mbar = msd.iter().sum::<f64>() / msd.len() as f64;
    if mbar == 0.0 {
        return Ok(GridDensity::uniform(grid));
    }
    let logs: Vec<f64> = msd.iter().map(|m| -m / (2.0 * mbar)).collect();
    GridDensity::from_log_values(grid, &logs)
}

/// Mode and marginal variances of a grid density.
pub fn prior_from_density(f: &GridDensity) -> OmegaPrior {
    let grid = f.grid();
    let (best, tied) = f.argmax();
    if tied {
        log::warn!("density maximum is attained at several nodes; using node {best}");
    }
    let mu = grid.node(best);
    let sigma2 = (0..grid.n_dims())
        .map(|d| {
            let h = grid.spacing(d);
            f.marginal_moments(d).1.max(h * h * f64::EPSILON)
        })
        .collect();
    OmegaPrior { mu, sigma2 }
}

/// `S(w) = sum_k |R(x_k; w)|^2` at every grid node for fixed field jets.
///
/// `fields[f][k]` is field `f` at collocation point `k`.
pub fn residual_sums(
    problem: &PdeProblem,
    grid: &OmegaGrid,
    colloc: &[f64],
    fields: &[Vec<FieldJet>],
) -> Result<Vec<f64>> {
    check_grid(problem, grid)?;
    let n = colloc.len() / problem.input_dim();
    if fields.len() != problem.n_fields() || fields.iter().any(|f| f.len() != n) || n == 0 {
        return Err(Error::invalid("field jets do not match collocation points"));
    }
    let out: Vec<f64> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|flat| problem.residual_sum(colloc, fields, &grid.node(flat)))
        .collect();
    if let Some(i) = out.iter().position(|s| !s.is_finite()) {
        return Err(Error::SolverFailure {
            omega: grid.node(i),
            message: "non-finite residual sum".into(),
        });
    }
    Ok(out)
}

/// `P(w) ∝ exp(-S(w) / (2 sigma2))`.
pub fn induced_omega_density(
    residual_sums: &[f64],
    sigma2: f64,
    grid: &OmegaGrid,
) -> Result<GridDensity> {
    if !(sigma2 > 0.0) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    let logs: Vec<f64> = residual_sums.iter().map(|s| -s / (2.0 * sigma2)).collect();
    GridDensity::from_log_values(grid, &logs)
}

/// `sum_i p_i dV log(p_i / q_i)`, with `q` floored and `p_i = 0` terms dropped.
pub fn kl_grid(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.grid() != q.grid() {
        return Err(Error::invalid("densities live on different grids"));
    }
    let dv = p.grid().cell_volume();
    let kl = p
        .values()
        .iter()
        .zip(q.values())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(DENSITY_FLOOR).ln()))
        .sum::<f64>()
        * dv;
    Ok(kl.max(0.0))
}

/// Residual variance whose induced density is closest (in KL) to `target`.
///
/// A log-spaced scan over `[1e-8, 1e8]` locates the basin, then golden-section
/// search on `ln sigma2` refines it.
pub fn fit_sigma2_by_kl(
    residual_sums: &[f64],
    target: &GridDensity,
    grid: &OmegaGrid,
) -> Result<f64> {
    let (lo, hi) = residual_sums
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    if !(hi - lo > 1e-14 * hi.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateInput(
            "residual sums are constant over the grid; every sigma2 fits equally".into(),
        ));
    }
    let objective = |log_s: f64| -> Result<f64> {
        let induced = induced_omega_density(residual_sums, log_s.exp(), grid)?;
        kl_grid(&induced, target)
    };

    let (a, b) = (SIGMA2_SCAN_LO.ln(), SIGMA2_SCAN_HI.ln());
    let decades = (SIGMA2_SCAN_HI / SIGMA2_SCAN_LO).log10().round() as usize;
    let n_scan = decades * SCAN_PER_DECADE + 1;
    let step = (b - a) / (n_scan - 1) as f64;
    let scan: Vec<f64> = (0..n_scan)
        .into_par_iter()
        .map(|k| objective(a + k as f64 * step))
        .collect::<Result<_>>()?;
    let best = scan
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    if best == 0 || best == n_scan - 1 {
        log::warn!(
            "KL minimum sits at the edge of the sigma2 scan ({:e})",
            (a + best as f64 * step).exp()
        );
    }

    let mut lo = a + best.saturating_sub(1) as f64 * step;
    let mut hi = a + (best + 1).min(n_scan - 1) as f64 * step;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    // width in ln sigma2 approximates the relative tolerance in sigma2
    while hi - lo > GOLDEN_REL_TOL {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = objective(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = objective(d)?;
        }
    }
    let mut best_log = 0.5 * (lo + hi);
    let mut best_val = objective(best_log)?;
    for (x, v) in [(a + best as f64 * step, scan[best]), (c, fc), (d, fd)] {
        if v < best_val {
            best_log = x;
            best_val = v;
        }
    }
    Ok(best_log.exp())
}

/// Inverse-gamma shape and scale with the given mean and mode.
pub fn invgamma_from_mean_mode(m_mean: f64, m_mode: f64) -> Result<ResidualWeightPrior> {
    if !(m_mode > 0.0 && m_mean > m_mode && m_mean.is_finite()) {
        return Err(Error::invalid(format!(
            "need mean > mode > 0, got mean {m_mean:e}, mode {m_mode:e}"
        )));
    }
    let alpha_r = (m_mean + m_mode) / (m_mean - m_mode);
    let beta_r = m_mean * (alpha_r - 1.0);
    Ok(ResidualWeightPrior {
        alpha_r,
        beta_r,
        sigma2_ini: m_mean,
        sigma2_asy: m_mode,
    })
}

/// Everything produced while building the priors.
#[derive(Debug, Clone)]
pub struct PriorBuild {
    pub omega_prior: OmegaPrior,
    pub residual_prior: ResidualWeightPrior,
    pub msd: Vec<f64>,
    pub density: GridDensity,
    pub residual_sums: Vec<f64>,
}

/// Phase-1 model evaluated where the prior construction needs it.
#[derive(Debug, Clone)]
pub struct PhaseOneView<'a> {
    /// Row-major data inputs.
    pub data_inputs: &'a [f64],
    /// Mean head at each data input.
    pub gamma: &'a [f64],
    /// Row-major collocation points.
    pub colloc: &'a [f64],
    /// Field jets at each collocation point, one vector per field.
    pub fields: &'a [Vec<FieldJet>],
}

pub fn build_priors(
    view: &PhaseOneView<'_>,
    problem: &PdeProblem,
    grid: &OmegaGrid,
) -> Result<PriorBuild> {
    let msd = msd_surface(view.gamma, problem, grid, view.data_inputs)?;
    let density = density_from_msd(&msd, grid)?;
    let omega_prior = prior_from_density(&density);

    let sums = residual_sums(problem, grid, view.colloc, view.fields)?;
    let wide = GridDensity::gaussian(grid, &omega_prior.mu, &omega_prior.sigma2)?;
    let sigma2_ini = fit_sigma2_by_kl(&sums, &wide, grid)?;
    let narrow_var: Vec<f64> = (0..grid.n_dims()).map(|d| grid.spacing(d).powi(2)).collect();
    let narrow = GridDensity::gaussian(grid, &omega_prior.mu, &narrow_var)?;
    let sigma2_asy = fit_sigma2_by_kl(&sums, &narrow, grid)?;
    if sigma2_ini <= sigma2_asy {
        return Err(Error::DegenerateInput(format!(
            "KL fits are inconsistent: sigma2_ini {sigma2_ini:e} <= sigma2_asy {sigma2_asy:e} \
             (prior variances {:?}, grid spacings {:?})",
            omega_prior.sigma2, narrow_var
        )));
    }
    let residual_prior = invgamma_from_mean_mode(sigma2_ini, sigma2_asy)?;
    Ok(PriorBuild {
        omega_prior,
        residual_prior,
        msd,
        density,
        residual_sums: sums,
    })
}
