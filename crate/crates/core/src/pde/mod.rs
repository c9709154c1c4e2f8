//! Problem definitions: residuals, parameter domains and per-parameter solvers.

mod bergman;
mod fisher;
mod poisson;

pub use bergman::{
    bergman_index, residual_bergman, solve_bergman, solve_bergman_with_step, BergmanInputs,
    DEFAULT_BOUNDS as BERGMAN_DEFAULT_BOUNDS, MAX_STEP_MIN,
};
pub use fisher::{
    fisher_travelling_wave, residual_fisher, solve_fisher, CARRYING_CAPACITY, TRUE_D, TRUE_R,
};
pub use poisson::{
    interpolate_uniform, residual_poisson, solve_poisson, solve_poisson_at, solve_tridiagonal,
    SOLVER_NODES, TRUE_SIGMA_F2, TRUE_X0,
};

use crate::error::{Error, Result};

pub const MAX_INPUT_DIM: usize = 2;

/// Value and input derivatives of one solution field at one point.
///
/// Only the first `input_dim` entries of `grad` and `hess` are meaningful.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub grad: [f64; MAX_INPUT_DIM],
    pub hess: [f64; MAX_INPUT_DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Poisson,
    FisherKpp,
    Bergman(BergmanInputs),
}

/// A differential-equation model with its unknown parameters `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    kind: ProblemKind,
    param_bounds: Vec<(f64, f64)>,
}

impl PdeProblem {
    /// 1D Poisson with Gaussian source; `x0 in [0, 1]`, `sigma_f2 in [0.01, 0.06]`.
    pub fn poisson() -> Self {
        PdeProblem {
            kind: ProblemKind::Poisson,
            param_bounds: vec![(0.0, 1.0), (0.01, 0.06)],
        }
    }

    /// Fisher-KPP; `r in [0.5, 3]`, `D in [2, 12]`.
    pub fn fisher_kpp() -> Self {
        PdeProblem {
            kind: ProblemKind::FisherKpp,
            param_bounds: vec![(0.5, 3.0), (2.0, 12.0)],
        }
    }

    pub fn bergman(inputs: BergmanInputs) -> Self {
        PdeProblem {
            kind: ProblemKind::Bergman(inputs),
            param_bounds: BERGMAN_DEFAULT_BOUNDS.to_vec(),
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "{} expects {} parameter bounds, got {}",
                self.name(),
                self.n_params(),
                bounds.len()
            )));
        }
        if let Some((i, b)) = bounds
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.0.is_finite() && b.1.is_finite() && b.0 < b.1))
        {
            return Err(Error::invalid(format!("bound {i} is not an interval: {b:?}")));
        }
        // every parameter except the Poisson source centre must stay positive
        let strict: Vec<usize> = match self.kind {
            ProblemKind::Poisson => vec![1],
            _ => (0..self.n_params()).collect(),
        };
        if let Some(&i) = strict.iter().find(|&&i| bounds[i].0 <= 0.0) {
            return Err(Error::invalid(format!(
                "parameter {} must be bounded away from zero",
                self.param_names()[i]
            )));
        }
        self.param_bounds = bounds;
        Ok(self)
    }

    /// Looks a problem up by its configuration name. Bergman needs data, so it is
    /// not constructible here.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "poisson1d" => Ok(Self::poisson()),
            "fisher-kpp" => Ok(Self::fisher_kpp()),
            "bergman" => Err(Error::invalid("the bergman problem is built from an IVGTT record")),
            other => Err(Error::invalid(format!("unknown problem '{other}'"))),
        }
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::Poisson => "poisson1d",
            ProblemKind::FisherKpp => "fisher-kpp",
            ProblemKind::Bergman(_) => "bergman",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            ProblemKind::FisherKpp => 2,
            _ => 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.kind {
            ProblemKind::Poisson => &["x0", "sigma_f2"],
            ProblemKind::FisherKpp => &["r", "D"],
            ProblemKind::Bergman(_) => &["p1", "p2", "p3"],
        }
    }

    pub fn param_bounds(&self) -> &[(f64, f64)] {
        &self.param_bounds
    }

    /// Number of solution fields entering the residual (u, or G and X).
    pub fn n_fields(&self) -> usize {
        match self.kind {
            ProblemKind::Bergman(_) => 2,
            _ => 1,
        }
    }

    pub fn n_residuals(&self) -> usize {
        self.n_fields()
    }

    /// Parameters that generated the synthetic case studies.
    pub fn true_omega(&self) -> Option<Vec<f64>> {
        match self.kind {
            ProblemKind::Poisson => Some(vec![TRUE_X0, TRUE_SIGMA_F2]),
            ProblemKind::FisherKpp => Some(vec![TRUE_R, TRUE_D]),
            ProblemKind::Bergman(_) => None,
        }
    }

    /// Noiseless solution at the true parameters, where one is known.
    pub fn exact(&self, pts: &[f64]) -> Option<Vec<f64>> {
        let omega = self.true_omega()?;
        self.solve(&omega, pts).ok()
    }

    pub fn bergman_inputs(&self) -> Option<&BergmanInputs> {
        match &self.kind {
            ProblemKind::Bergman(inputs) => Some(inputs),
            _ => None,
        }
    }

    /// Observable solution `L_p(x; omega)` at row-major points `pts`.
    pub fn solve(&self, omega: &[f64], pts: &[f64]) -> Result<Vec<f64>> {
        if omega.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.n_params(),
                omega.len()
            )));
        }
        let out = match &self.kind {
            ProblemKind::Poisson => solve_poisson_at((omega[0], omega[1]), pts)?,
            ProblemKind::FisherKpp => solve_fisher((omega[0], omega[1]), pts)?,
            ProblemKind::Bergman(inputs) => {
                solve_bergman((omega[0], omega[1], omega[2]), inputs, pts)?.0
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure {
                omega: omega.to_vec(),
                message: "non-finite solution".into(),
            });
        }
        Ok(out)
    }

    /// Residual components at point `x` for fields `fields`.
    pub fn residuals(&self, x: &[f64], fields: &[FieldJet], omega: &[f64]) -> [f64; 2] {
        match &self.kind {
            ProblemKind::Poisson => {
                [fields[0].hess[0] + poisson::source(x[0], omega[0], omega[1]), 0.0]
            }
            ProblemKind::FisherKpp => {
                let u = &fields[0];
                [
                    fisher::residual_unchecked(u.grad[1], u.hess[0], u.value, omega[0], omega[1]),
                    0.0,
                ]
            }
            ProblemKind::Bergman(inputs) => {
                let (g, xr) = (&fields[0], &fields[1]);
                let (r1, r2) = bergman::residual_unchecked(
                    g.grad[0],
                    xr.grad[0],
                    g.value,
                    xr.value,
                    inputs.insulin_at(x[0]),
                    (omega[0], omega[1], omega[2]),
                    (inputs.g_b, inputs.i_b),
                );
                [r1, r2]
            }
        }
    }

    /// Sum of squared residual components at `x`, with its partial derivatives
    /// written into `d_fields` (one entry per field) and `d_omega`.
    pub fn residual_sq_grad(
        &self,
        x: &[f64],
        fields: &[FieldJet],
        omega: &[f64],
        d_fields: &mut [FieldJet],
        d_omega: &mut [f64],
    ) -> f64 {
        for f in d_fields.iter_mut() {
            *f = FieldJet::default();
        }
        match &self.kind {
            ProblemKind::Poisson => {
                let (x0, s2) = (omega[0], omega[1]);
                let dx = x[0] - x0;
                let g = poisson::source(x[0], x0, s2);
                let r = fields[0].hess[0] + g;
                d_fields[0].hess[0] = 2.0 * r;
                d_omega[0] = 2.0 * r * g * dx / s2;
                d_omega[1] = 2.0 * r * g * dx * dx / (2.0 * s2 * s2);
                r * r
            }
            ProblemKind::FisherKpp => {
                let (rate, diff) = (omega[0], omega[1]);
                let u = &fields[0];
                let r = fisher::residual_unchecked(u.grad[1], u.hess[0], u.value, rate, diff);
                let k = 1.0 / CARRYING_CAPACITY;
                d_fields[0].value = 2.0 * r * (-rate * (1.0 - 2.0 * k * u.value));
                d_fields[0].grad[1] = 2.0 * r;
                d_fields[0].hess[0] = -2.0 * r * diff;
                d_omega[0] = -2.0 * r * u.value * (1.0 - k * u.value);
                d_omega[1] = -2.0 * r * u.hess[0];
                r * r
            }
            ProblemKind::Bergman(inputs) => {
                let (p1, p2, p3) = (omega[0], omega[1], omega[2]);
                let (g, xr) = (&fields[0], &fields[1]);
                let i_t = inputs.insulin_at(x[0]);
                let (r1, r2) = bergman::residual_unchecked(
                    g.grad[0],
                    xr.grad[0],
                    g.value,
                    xr.value,
                    i_t,
                    (p1, p2, p3),
                    (inputs.g_b, inputs.i_b),
                );
                d_fields[0].value = 2.0 * r1 * (p1 + xr.value);
                d_fields[0].grad[0] = 2.0 * r1;
                d_fields[1].value = 2.0 * r1 * g.value + 2.0 * r2 * p2;
                d_fields[1].grad[0] = 2.0 * r2;
                d_omega[0] = 2.0 * r1 * (g.value - inputs.g_b);
                d_omega[1] = 2.0 * r2 * xr.value;
                d_omega[2] = -2.0 * r2 * (i_t - inputs.i_b);
                r1 * r1 + r2 * r2
            }
        }
    }

    /// Sum over points of squared residuals, `S(omega) = sum_k |R(x_k; omega)|^2`.
    pub fn residual_sum(&self, xs: &[f64], fields: &[Vec<FieldJet>], omega: &[f64]) -> f64 {
        let d = self.input_dim();
        let n_res = self.n_residuals();
        let n = xs.len() / d;
        let mut buf = [FieldJet::default(); 2];
        let mut s = 0.0;
        for k in 0..n {
            for (f, field) in fields.iter().enumerate() {
                buf[f] = field[k];
            }
            let r = self.residuals(&xs[k * d..(k + 1) * d], &buf[..fields.len()], omega);
            s += r[..n_res].iter().map(|v| v * v).sum::<f64>();
        }
        s
    }
}
