//! Bergman minimal model of glucose-insulin dynamics:
//!
//! ```text
//! dG/dt = -p1 (G - G_b) - X G
//! dX/dt = -p2 X + p3 (I(t) - I_b)
//! ```
//!
//! with the measured insulin `I(t)` treated as a known, piecewise-linear forcing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default parameter bounds `(p1, p2, p3)`.
pub const DEFAULT_BOUNDS: [(f64, f64); 3] = [(0.005, 0.1), (0.005, 0.2), (1e-7, 1e-4)];

/// Largest RK4 step in minutes.
pub const MAX_STEP_MIN: f64 = 0.5;

/// A validated IVGTT record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BergmanInputs {
    pub times: Vec<f64>,
    pub glucose: Vec<f64>,
    pub insulin: Vec<f64>,
    pub g_b: f64,
    pub i_b: f64,
}

impl BergmanInputs {
    /// Validates the series and sets the basal levels, estimated as the mean of
    /// the final two samples of each series unless `basals` overrides them.
    pub fn new(
        times: Vec<f64>,
        glucose: Vec<f64>,
        insulin: Vec<f64>,
        basals: Option<(f64, f64)>,
    ) -> Result<Self> {
        let n = times.len();
        if glucose.len() != n || insulin.len() != n {
            return Err(Error::invalid(format!(
                "series lengths differ: {} times, {} glucose, {} insulin",
                n,
                glucose.len(),
                insulin.len()
            )));
        }
        if n < 4 {
            return Err(Error::invalid(format!("need at least 4 samples, got {n}")));
        }
        if let Some(i) = (1..n).find(|&i| !(times[i] > times[i - 1])) {
            return Err(Error::invalid(format!(
                "sample times must be strictly increasing (row {i})"
            )));
        }
        if let Some(i) = (0..n).find(|&i| !(glucose[i] > 0.0 && insulin[i] > 0.0)) {
            return Err(Error::invalid(format!(
                "concentrations must be positive (row {i})"
            )));
        }
        let (g_b, i_b) = basals.unwrap_or((
            0.5 * (glucose[n - 1] + glucose[n - 2]),
            0.5 * (insulin[n - 1] + insulin[n - 2]),
        ));
        if !(g_b > 0.0 && i_b > 0.0) {
            return Err(Error::invalid("basal levels must be positive"));
        }
        Ok(BergmanInputs { times, glucose, insulin, g_b, i_b })
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Piecewise-linear insulin, held constant outside the sampled range.
    pub fn insulin_at(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.insulin[0];
        }
        if t >= ts[ts.len() - 1] {
            return self.insulin[ts.len() - 1];
        }
        let k = ts.partition_point(|&v| v <= t) - 1;
        let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
        self.insulin[k] * (1.0 - w) + self.insulin[k + 1] * w
    }
}

fn check_positive(omega: (f64, f64, f64)) -> Result<()> {
    if !(omega.0 > 0.0 && omega.1 > 0.0 && omega.2 > 0.0) {
        return Err(Error::invalid(format!(
            "bergman parameters must be positive, got {omega:?}"
        )));
    }
    Ok(())
}

/// Glucose and remote-insulin residuals of the minimal model.
#[allow(clippy::too_many_arguments)]
pub fn residual_bergman(
    dg_dt: f64,
    dx_dt: f64,
    g: f64,
    x: f64,
    i_t: f64,
    omega: (f64, f64, f64),
    basals: (f64, f64),
) -> Result<(f64, f64)> {
    check_positive(omega)?;
    Ok(residual_unchecked(dg_dt, dx_dt, g, x, i_t, omega, basals))
}

#[inline]
pub(crate) fn residual_unchecked(
    dg_dt: f64,
    dx_dt: f64,
    g: f64,
    x: f64,
    i_t: f64,
    (p1, p2, p3): (f64, f64, f64),
    (g_b, i_b): (f64, f64),
) -> (f64, f64) {
    (
        dg_dt + p1 * (g - g_b) + x * g,
        dx_dt + p2 * x - p3 * (i_t - i_b),
    )
}

/// RK4 trajectory at `t_eval` with the default step bound.
pub fn solve_bergman(
    omega: (f64, f64, f64),
    inputs: &BergmanInputs,
    t_eval: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    solve_bergman_with_step(omega, inputs, t_eval, MAX_STEP_MIN)
}

/// Classical RK4 from `G(t0)` = first glucose sample and `X(t0) = 0`.
///
/// Integration breaks at every sample time and every evaluation time, so the
/// insulin forcing is linear within each step; each segment is split into equal
/// steps no longer than `max_step`.
pub fn solve_bergman_with_step(
    omega: (f64, f64, f64),
    inputs: &BergmanInputs,
    t_eval: &[f64],
    max_step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(max_step > 0.0) {
        return Err(Error::invalid("step bound must be positive"));
    }
    let (t0, t1) = (inputs.t_start(), inputs.t_end());
    if let Some(t) = t_eval.iter().find(|&&t| !(t >= t0 && t <= t1)) {
        return Err(Error::invalid(format!(
            "evaluation time {t} outside data range [{t0}, {t1}]"
        )));
    }
    let mut order: Vec<usize> = (0..t_eval.len()).collect();
    order.sort_by(|&a, &b| t_eval[a].total_cmp(&t_eval[b]));

    let mut breaks: Vec<f64> = inputs.times.iter().chain(t_eval).copied().collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let (p1, p2, p3) = omega;
    let (g_b, i_b) = (inputs.g_b, inputs.i_b);
    let rhs = |t: f64, g: f64, x: f64| -> (f64, f64) {
        (
            -p1 * (g - g_b) - x * g,
            -p2 * x + p3 * (inputs.insulin_at(t) - i_b),
        )
    };

    let mut g_out = vec![0.0; t_eval.len()];
    let mut x_out = vec![0.0; t_eval.len()];
    let (mut g, mut x) = (inputs.glucose[0], 0.0);
    let mut cursor = 0;
    let mut record = |t: f64, g: f64, x: f64, cursor: &mut usize| {
        while *cursor < order.len() && t_eval[order[*cursor]] == t {
            g_out[order[*cursor]] = g;
            x_out[order[*cursor]] = x;
            *cursor += 1;
        }
    };
    record(breaks[0], g, x, &mut cursor);
    for w in breaks.windows(2) {
        let span = w[1] - w[0];
        let n = (span / max_step).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for s in 0..n {
            let t = w[0] + s as f64 * h;
            let k1 = rhs(t, g, x);
            let k2 = rhs(t + 0.5 * h, g + 0.5 * h * k1.0, x + 0.5 * h * k1.1);
            let k3 = rhs(t + 0.5 * h, g + 0.5 * h * k2.0, x + 0.5 * h * k2.1);
            let k4 = rhs(t + h, g + h * k3.0, x + h * k3.1);
            g += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            x += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        if !(g.is_finite() && x.is_finite()) {
            return Err(Error::SolverFailure {
                omega: vec![p1, p2, p3],
                message: format!("trajectory diverged near t = {}", w[1]),
            });
        }
        record(w[1], g, x, &mut cursor);
    }
    Ok((g_out, x_out))
}

/// Glucose effectiveness `S_G = p1` and insulin sensitivity `S_I = p3 / p2`.
pub fn bergman_index(omega: (f64, f64, f64)) -> Result<(f64, f64)> {
    if omega.1 == 0.0 {
        return Err(Error::invalid("insulin sensitivity undefined for p2 = 0"));
    }
    Ok((omega.0, omega.2 / omega.1))
}
